"""Simulation state and the one-step transition as seven fixed-order sub-steps.

Per step: (1) receive due replenishment orders at non-destination nodes,
(2) receive scheduled arrivals at the destination (backlog cleared first),
(3) reset edge containers, (4) draw demand, update the smoothed estimate and
serve, (5) dispatch warehouses toward the destination round-robin over items,
(6) inter-warehouse pulls upstream-first, (7) place source orders with random
lead times. Randomness enters only at sub-steps (4) and (7); everything else
is integer bookkeeping, which is what makes the conservation audits exact.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, replace

import numpy as np

from .config import PolicyTable, RunConfig, materialize_policies
from .demand import IntensityTensor, build_intensity, demand_streams, draw_unit_volumes
from .network import NetworkSpec, RoutingTables, backsolve_lastmile, build_routing
from .rng import restore_stream, stream, stream_state

logger = logging.getLogger(__name__)

SMOOTHING_ALPHA = 0.05
REACTIVE_PIPELINE_UNITS = 3.0  # buffer when the pipeline multiplier is zero
SNAPSHOT_VERSION = 1


# -- packing -----------------------------------------------------------------


def _units_fit(residual: float, volume: float) -> int:
    k = int(residual / volume)
    if k and k * volume > residual:  # guard against the ratio rounding up
        k -= 1
    return k


def greedy_pack(volume: float, max_units: int, path, containers: dict) -> int:
    """First-fit placement of up to ``max_units`` identical units along a path.

    Each unit needs one container with enough residual volume on every edge of
    the path; the first edge that cannot host a unit stops the fill for good,
    and nothing is committed for units that do not fit end to end. Returns the
    number of units placed. Equivalent to walking units one at a time, always
    into the lowest-indexed container that still fits.
    """
    if max_units <= 0 or volume <= 0:
        return 0
    placed = max_units
    for key in path:
        cap = 0
        for r in containers[key]:
            cap += _units_fit(r, volume)
            if cap >= placed:
                break
        if cap < placed:
            placed = cap
            if placed == 0:
                return 0
    for key in path:
        left = placed
        res = containers[key]
        for j in range(len(res)):
            if left == 0:
                break
            k = _units_fit(res[j], volume)
            if k:
                if k > left:
                    k = left
                res[j] -= k * volume
                left -= k
    return placed


def draw_lead_time(mu: float, rng: np.random.Generator) -> int:
    """Discretized Gaussian lead time: max(1, ceil(N(mu, (0.2 mu)^2)))."""
    return max(1, math.ceil(rng.normal(mu, 0.2 * mu)))


# -- state -------------------------------------------------------------------


@dataclass
class TwinState:
    """Markov state: on-hand, backlog, outstanding orders, scheduled arrivals,
    and the smoothed demand estimate."""

    oh: np.ndarray                    # (N, C) on-hand units
    backlog: np.ndarray               # (C,) units owed at the destination
    out_due: np.ndarray               # (N, C) arrival step of the open order, -1 if none
    out_qty: np.ndarray               # (N, C) size of the open order
    it_sched: dict[int, np.ndarray]   # arrival step -> (C,) units bound for the destination
    it_total: np.ndarray              # (C,) total scheduled destination arrivals
    smoothed: np.ndarray              # (C,) EWMA of observed demand
    t: int = 0

    @property
    def nodes(self) -> int:
        return self.oh.shape[0]

    @property
    def items(self) -> int:
        return self.oh.shape[1]

    def scalar_dimension(self) -> int:
        """Fixed scalar dimension C(3N + 1): on-hand + backlog + order slots + EWMA."""
        N, C = self.oh.shape
        return C * (3 * N + 1)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.oh.tobytes())
        h.update(self.backlog.tobytes())
        h.update(self.out_due.tobytes())
        h.update(self.out_qty.tobytes())
        for day in sorted(self.it_sched):
            h.update(day.to_bytes(8, "little", signed=True))
            h.update(self.it_sched[day].tobytes())
        h.update(self.it_total.tobytes())
        h.update(self.smoothed.tobytes())
        h.update(self.t.to_bytes(8, "little", signed=True))
        return h.hexdigest()

    def copy(self) -> "TwinState":
        return TwinState(
            oh=self.oh.copy(), backlog=self.backlog.copy(),
            out_due=self.out_due.copy(), out_qty=self.out_qty.copy(),
            it_sched={k: v.copy() for k, v in self.it_sched.items()},
            it_total=self.it_total.copy(), smoothed=self.smoothed.copy(), t=self.t,
        )


def init_state(network: NetworkSpec, policies: PolicyTable, tensor: IntensityTensor) -> TwinState:
    """Initial state: drawn inventories, no backlog, empty pipelines, EWMA at base rates."""
    N = len(network.nodes)
    C = tensor.items
    return TwinState(
        oh=policies.init.copy(),
        backlog=np.zeros(C, dtype=np.int64),
        out_due=np.full((N, C), -1, dtype=np.int64),
        out_qty=np.zeros((N, C), dtype=np.int64),
        it_sched={},
        it_total=np.zeros(C, dtype=np.int64),
        smoothed=tensor.base_rates.copy(),
        t=0,
    )


@dataclass(frozen=True)
class DispatchRecord:
    """One committed shipment: used for the release log and every audit."""

    day: int
    arrival_day: int
    src: str
    dst: str
    item: int
    units: int
    path: tuple[str, ...]
    edge_times: tuple[float, ...]


@dataclass
class StepRecord:
    """Everything one step emits, consumed by sinks (writers, service, audits)."""

    t: int
    demand: np.ndarray
    served: np.ndarray
    new_backlog: np.ndarray
    oh_end: np.ndarray          # (N, C), end of step
    backlog_end: np.ndarray     # (C,), end of step (unchanged after sub-step 4)
    it_total_end: np.ndarray    # (C,)
    shipments: list[DispatchRecord]
    source_arrivals: list[tuple[str, int, int]]
    edge_placed: dict[tuple[str, str], float]
    shock_level: float


class StepSink:
    """No-op sink; writers override what they need."""

    def begin(self, sim: "Simulation") -> None:
        pass

    def on_step(self, rec: StepRecord) -> None:
        pass

    def finalize(self, summary: "RolloutSummary") -> None:
        pass


@dataclass
class RolloutSummary:
    items: int
    horizon: int
    seed: int
    total_demand: int
    total_served: int
    fill_rate: float
    shipment_rows: int
    wall_seconds: float


# -- simulation ----------------------------------------------------------------


class Simulation:
    """One live rollout: immutable inputs plus the evolving Markov state.

    Strictly single-threaded per instance; run several instances for parallel
    rollouts. ``step()`` advances exactly one time unit and returns the step's
    emissions.
    """

    def __init__(self, cfg: RunConfig, tensor: IntensityTensor, network: NetworkSpec,
                 routing: RoutingTables, policies: PolicyTable, unit_volumes: np.ndarray):
        self.cfg = cfg
        self.tensor = tensor
        self.network = network
        self.routing = routing
        self.policies = policies
        self.unit_volumes = unit_volumes

        self.C = cfg.params.items
        self.node_ids = network.node_ids
        self.node_row = {n: idx for idx, n in enumerate(self.node_ids)}
        self.dst_row = self.node_row[network.destination]
        self.dst_id = network.destination
        self.src_rows = [(self.node_row[n], n) for n in self.node_ids
                         if network.node(n).role == "source"]
        self._source_row_set = {row for row, _ in self.src_rows}

        self._rebuild_route_cache()

        self.lead_rng = stream(cfg.params.seed, "leadtime")
        self.demand_rngs = demand_streams(cfg.params.seed, self.C)
        self.state = init_state(network, policies, tensor)
        self.containers: dict[tuple[str, str], list[float]] = {}
        self.edge_capacity = {e.key: e.containers * e.volume for e in network.edges}

    # route/path caches depend on routing tables and edge attributes
    def _rebuild_route_cache(self) -> None:
        net, routing = self.network, self.routing
        self.edges = {e.key: e for e in net.edges}
        self.dispatch_plan = []
        for w in routing.dispatch_order:
            path = routing.dispatch_path[w]
            keys = [(path[k], path[k + 1]) for k in range(len(path) - 1)]
            times = tuple(float(self.edges[k].transit) for k in keys)
            offset = math.ceil(sum(times))
            self.dispatch_plan.append((self.node_row[w], w, keys, offset, tuple(path), times))
        self.pull_plan: dict[int, list] = {}
        for n in routing.upstream_rank:
            plans = []
            for route in routing.pull_order[n]:
                keys = [(route.path[k], route.path[k + 1]) for k in range(len(route.path) - 1)]
                times = tuple(float(self.edges[k].transit) for k in keys)
                offset = math.ceil(sum(times))
                plans.append((self.node_row[route.supplier], route.supplier, keys, offset,
                              route.path, times))
            self.pull_plan[self.node_row[n]] = plans
        self.upstream_rows = [self.node_row[n] for n in routing.upstream_rank]

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Simulation":
        tensor = build_intensity(cfg.params.items, cfg.params.horizon,
                                 cfg.knobs.demand, cfg.params.seed)
        network = cfg.network
        if any(e.backsolved for e in network.edges):
            t = cfg.knobs.transport
            vol_lo, vol_hi = cfg.knobs.demand.unit_volume_range
            network = backsolve_lastmile(
                network, cfg.params.items, tensor.mean_intensity(),
                mean_item_volume=(vol_lo + vol_hi) / 2.0,
                load_factor=t.load_factor,
                packing_efficiency=t.packing_efficiency,
                split=t.lastmile_split,
            )
        routing = build_routing(network)
        policies = materialize_policies(cfg)
        volumes = draw_unit_volumes(cfg.params.items, cfg.knobs.demand, cfg.params.seed)
        return cls(cfg, tensor, network, routing, policies, volumes)

    # -- one step ------------------------------------------------------------

    def step(self) -> StepRecord:
        st = self.state
        t = st.t
        if t >= self.cfg.params.horizon:
            raise RuntimeError(f"step {t} beyond horizon {self.cfg.params.horizon}")
        C = self.C
        oh = st.oh
        shipments: list[DispatchRecord] = []
        source_arrivals: list[tuple[str, int, int]] = []

        # (1) receive due replenishment orders at non-destination nodes
        due = (st.out_due >= 0) & (st.out_due <= t)
        if due.any():
            for n_row, item in zip(*np.nonzero(due)):
                qty = int(st.out_qty[n_row, item])
                oh[n_row, item] += qty
                if n_row in self._source_row_set:
                    source_arrivals.append((self.node_ids[n_row], int(item), qty))
            st.out_due[due] = -1
            st.out_qty[due] = 0

        # (2) receive scheduled arrivals at the destination, backlog first
        arrivals = st.it_sched.pop(t, None)
        if arrivals is not None:
            cleared = np.minimum(arrivals, st.backlog)
            st.backlog -= cleared
            oh[self.dst_row] += arrivals - cleared
            st.it_total -= arrivals

        # (3) reset edge containers
        containers = {
            key: [edge.volume] * edge.containers for key, edge in self.edges.items()
        }
        self.containers = containers
        edge_placed = {key: 0.0 for key in self.edges}

        # (4) demand, smoothed-demand update, service at the destination
        y = np.array([self.demand_rngs[i].poisson(self.tensor.rates[t, i]) for i in range(C)],
                     dtype=np.int64)
        st.smoothed = SMOOTHING_ALPHA * y + (1.0 - SMOOTHING_ALPHA) * st.smoothed
        oh_dst = oh[self.dst_row]
        served = np.minimum(oh_dst, y)
        new_backlog = y - served
        oh_dst -= served
        st.backlog += new_backlog

        # (5) dispatch warehouses -> destination, round-robin over items
        m = self.cfg.params.pipeline_multiplier
        m_eff = m if m > 0 else REACTIVE_PIPELINE_UNITS
        backlog = st.backlog
        it_total = st.it_total
        smoothed = st.smoothed
        volumes = self.unit_volumes
        start = t % C
        for k in range(C):
            i = start + k
            if i >= C:
                i -= C
            remaining = float(backlog[i]) + m_eff * smoothed[i] - float(it_total[i]) - float(oh_dst[i])
            if remaining < 1.0:
                continue
            v_i = volumes[i]
            for w_row, w_id, keys, offset, path, times in self.dispatch_plan:
                stock = oh[w_row, i]
                if stock <= 0:
                    continue
                q_try = int(min(int(stock), int(remaining)))
                placed = greedy_pack(v_i, q_try, keys, containers)
                if placed:
                    oh[w_row, i] -= placed
                    arrival = t + offset
                    sched = st.it_sched.get(arrival)
                    if sched is None:
                        sched = np.zeros(C, dtype=np.int64)
                        st.it_sched[arrival] = sched
                    sched[i] += placed
                    it_total[i] += placed
                    shipments.append(DispatchRecord(t, arrival, w_id, self.dst_id,
                                                    i, placed, path, times))
                    for key in keys:
                        edge_placed[key] += placed * v_i
                    remaining -= placed
                    if remaining < 1.0:
                        break

        # (6) inter-warehouse pulls, upstream-first
        s_levels = self.policies.s
        S_levels = self.policies.S
        for n_row in self.upstream_rows:
            oh_row = oh[n_row]
            trigger = np.nonzero((oh_row < s_levels[n_row]) & (st.out_due[n_row] < 0))[0]
            for i in trigger:
                qty = int(S_levels[n_row, i] - oh_row[i])
                v_i = volumes[i]
                for u_row, u_id, keys, offset, path, times in self.pull_plan[n_row]:
                    available = int(oh[u_row, i])
                    if available <= 0:
                        continue
                    placed = greedy_pack(v_i, min(available, qty), keys, containers)
                    if placed:
                        oh[u_row, i] -= placed
                        arrival = t + offset
                        st.out_due[n_row, i] = arrival
                        st.out_qty[n_row, i] = placed
                        shipments.append(DispatchRecord(t, arrival, u_id, self.node_ids[n_row],
                                                        int(i), placed, path, times))
                        for key in keys:
                            edge_placed[key] += placed * v_i
                        break

        # (7) source orders with random lead times, drawn lazily in fixed order
        mu = self.policies.mu
        for n_row, node_id in self.src_rows:
            oh_row = oh[n_row]
            trigger = np.nonzero((oh_row < s_levels[n_row]) & (st.out_due[n_row] < 0))[0]
            for i in trigger:
                lead = draw_lead_time(float(mu[n_row, i]), self.lead_rng)
                st.out_due[n_row, i] = t + lead
                st.out_qty[n_row, i] = S_levels[n_row, i] - oh_row[i]

        st.t = t + 1
        return StepRecord(
            t=t,
            demand=y,
            served=served,
            new_backlog=new_backlog,
            oh_end=oh.copy(),
            backlog_end=st.backlog.copy(),
            it_total_end=st.it_total.copy(),
            shipments=shipments,
            source_arrivals=source_arrivals,
            edge_placed=edge_placed,
            shock_level=float(self.tensor.shock.path[t]),
        )

    def edge_utilization(self, edge_placed: dict) -> dict[tuple[str, str], float]:
        return {key: placed / self.edge_capacity[key] for key, placed in edge_placed.items()}

    # -- snapshot / resume -----------------------------------------------------

    def snapshot(self) -> dict:
        """Versioned, JSON-serializable capture of state plus stream positions."""
        st = self.state
        return {
            "version": SNAPSHOT_VERSION,
            "t": st.t,
            "oh": st.oh.tolist(),
            "backlog": st.backlog.tolist(),
            "out_due": st.out_due.tolist(),
            "out_qty": st.out_qty.tolist(),
            "it_sched": {str(k): v.tolist() for k, v in st.it_sched.items()},
            "it_total": st.it_total.tolist(),
            "smoothed": st.smoothed.tolist(),
            "lead_rng": stream_state(self.lead_rng),
            "demand_rngs": [stream_state(g) for g in self.demand_rngs],
        }

    def restore(self, snap: dict) -> None:
        if snap.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {snap.get('version')!r}")
        N, C = len(self.node_ids), self.C
        st = self.state
        st.t = int(snap["t"])
        st.oh = np.array(snap["oh"], dtype=np.int64).reshape(N, C)
        st.backlog = np.array(snap["backlog"], dtype=np.int64)
        st.out_due = np.array(snap["out_due"], dtype=np.int64).reshape(N, C)
        st.out_qty = np.array(snap["out_qty"], dtype=np.int64).reshape(N, C)
        st.it_sched = {int(k): np.array(v, dtype=np.int64) for k, v in snap["it_sched"].items()}
        st.it_total = np.array(snap["it_total"], dtype=np.int64)
        st.smoothed = np.array(snap["smoothed"], dtype=np.float64)
        self.lead_rng = restore_stream(snap["lead_rng"])
        self.demand_rngs = [restore_stream(s) for s in snap["demand_rngs"]]

    def save_snapshot(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.snapshot(), fh)

    def load_snapshot(self, path) -> None:
        with open(path) as fh:
            self.restore(json.load(fh))

    # -- mid-run disruption hooks (used by the session service) ----------------

    def scale_future_intensity(self, mult: float) -> None:
        """Multiply the remaining rate rows, preserving the per-item floor."""
        if mult <= 0:
            raise ValueError("intensity multiplier must be positive")
        t = self.state.t
        floor = 0.08 * self.tensor.base_rates
        rates = self.tensor.rates
        rates[t:] = np.maximum(rates[t:] * mult, floor[None, :])

    def scale_containers(self, mult: float, lastmile_only: bool = False) -> None:
        """Rescale per-edge container counts (min 1) from the next step on."""
        if mult <= 0:
            raise ValueError("container scale must be positive")
        edges = []
        for e in self.network.edges:
            if lastmile_only and e.dst != self.dst_id:
                edges.append(e)
                continue
            edges.append(replace(e, containers=max(1, int(math.floor(e.containers * mult + 0.5)))))
        self.network = NetworkSpec(nodes=list(self.network.nodes), edges=edges)
        self.routing = build_routing(self.network)
        self._rebuild_route_cache()
        self.edge_capacity = {e.key: e.containers * e.volume for e in self.network.edges}

    def scale_lead_times(self, mult: float) -> None:
        """Rescale source lead-time means for all future draws."""
        if mult <= 0:
            raise ValueError("lead-time scale must be positive")
        mu = self.policies.mu.astype(np.float64) * mult
        self.policies.mu = np.maximum(1, np.floor(mu + 0.5)).astype(np.int64)


def run_rollout(cfg: RunConfig, sink: StepSink | None = None,
                progress_every: int = 0) -> tuple[RolloutSummary, Simulation]:
    """Build a simulation from config and run it over the full horizon."""
    started = time.perf_counter()
    sim = Simulation.from_config(cfg)
    sink = sink or StepSink()
    sink.begin(sim)
    total_demand = 0
    total_served = 0
    shipment_rows = 0
    T = cfg.params.horizon
    for t in range(T):
        rec = sim.step()
        total_demand += int(rec.demand.sum())
        total_served += int(rec.served.sum())
        shipment_rows += len(rec.shipments)
        sink.on_step(rec)
        if progress_every and (t + 1) % progress_every == 0:
            logger.info("step %d/%d (%.1f%%)", t + 1, T, 100.0 * (t + 1) / T)
    summary = RolloutSummary(
        items=cfg.params.items,
        horizon=T,
        seed=cfg.params.seed,
        total_demand=total_demand,
        total_served=total_served,
        fill_rate=(total_served / total_demand) if total_demand else 1.0,
        shipment_rows=shipment_rows,
        wall_seconds=time.perf_counter() - started,
    )
    sink.finalize(summary)
    return summary, sim
