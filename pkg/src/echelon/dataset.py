"""Release-directory emission and parsing.

A release holds six CSV streams, the rate tensor as a ``.npy`` array, and a
one-line column sidecar. Two extension files -- ``manifest.json`` (checksums,
config echo) and ``source_arrivals.csv`` (boundary inflow events, which the
six public files cannot express) -- ride alongside and are clearly marked as
extensions in the manifest. Writers stream with bounded memory; serialization
is pinned (LF newlines, no quoting except the list-literal columns) so the
same seed always produces byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .config import RunConfig, serialize_config
from .engine import RolloutSummary, Simulation, StepRecord, StepSink, run_rollout

logger = logging.getLogger(__name__)

PARTIAL_MARKER = "_PARTIAL"
MANIFEST_NAME = "manifest.json"

DAILY_HEADER = ("day,item,demand,served_from_stock,new_backlog_today,"
                "dest_on_hand_end_before_ship,dest_backlog_end_before_ship")
SHIPMENTS_HEADER = "day,arrival_day,from,to,item,units,path_nodes,edge_times"
INVENTORY_HEADER = "day,node,item,on_hand"
BACKLOG_HEADER = "day,node,item,backlog"
INTRANSIT_HEADER = "day,node,item,in_transit"
SUMMARY_HEADER = "item,total_demand,served_from_stock,new_backlog_added,fill_rate_stock_only"
SOURCE_ARRIVALS_HEADER = "day,node,item,units"

CSV_FILES = (
    "daily_records.csv", "shipments.csv", "inventory_history.csv",
    "backlog_history.csv", "intransit_history.csv", "service_summary.csv",
)
ALL_FILES = CSV_FILES + ("demand_signals.npy", "demand_signals_cols.txt")


class ReleaseError(ValueError):
    """Raised when a release directory violates the published schema."""


def item_labels(C: int) -> list[str]:
    width = len(str(C))
    return [f"I{i + 1:0{width}d}" for i in range(C)]


class _HashedText:
    """Text sink that maintains a running sha256 of everything written."""

    def __init__(self, path: Path):
        self._fh = open(path, "w", newline="")
        self.sha = hashlib.sha256()

    def write(self, text: str) -> int:
        self.sha.update(text.encode("utf-8"))
        return self._fh.write(text)

    def close(self) -> None:
        self._fh.close()


class ReleaseWriter(StepSink):
    """Streams one rollout into a release directory with bounded memory."""

    def __init__(self, out_dir: str | Path, chunk_steps: int = 2048):
        self.out_dir = Path(out_dir)
        self.chunk_steps = chunk_steps
        self._buffers: dict[str, list] = {k: [] for k in
                                          ("demand", "served", "newb", "oh", "backlog", "it")}
        self._shipments: list = []
        self._src_arrivals: list = []
        self._chunk_start = 0
        self._route_cache: dict[tuple, tuple[str, str]] = {}
        self.row_counts = {name: 0 for name in CSV_FILES + ("source_arrivals.csv",)}

    # -- sink interface -----------------------------------------------------

    def begin(self, sim: Simulation) -> None:
        self.sim = sim
        self.C = sim.C
        self.items = item_labels(self.C)
        self.node_ids = sim.node_ids
        N = len(self.node_ids)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        (self.out_dir / PARTIAL_MARKER).write_text("rollout in progress\n")

        self._files = {
            "daily_records.csv": _HashedText(self.out_dir / "daily_records.csv"),
            "shipments.csv": _HashedText(self.out_dir / "shipments.csv"),
            "inventory_history.csv": _HashedText(self.out_dir / "inventory_history.csv"),
            "backlog_history.csv": _HashedText(self.out_dir / "backlog_history.csv"),
            "intransit_history.csv": _HashedText(self.out_dir / "intransit_history.csv"),
            "source_arrivals.csv": _HashedText(self.out_dir / "source_arrivals.csv"),
        }
        headers = {
            "daily_records.csv": DAILY_HEADER,
            "shipments.csv": SHIPMENTS_HEADER,
            "inventory_history.csv": INVENTORY_HEADER,
            "backlog_history.csv": BACKLOG_HEADER,
            "intransit_history.csv": INTRANSIT_HEADER,
            "source_arrivals.csv": SOURCE_ARRIVALS_HEADER,
        }
        for name, sink in self._files.items():
            sink.write(headers[name] + "\n")

        # repeated label codes for the long-form files
        self._hist_node_codes = np.repeat(np.arange(N, dtype=np.int32), self.C)
        self._hist_item_codes = np.tile(np.arange(self.C, dtype=np.int32), N)
        self._daily_item_codes = np.arange(self.C, dtype=np.int32)
        self._dst_row = sim.dst_row

        np.save(self.out_dir / "demand_signals.npy", sim.tensor.rates)
        (self.out_dir / "demand_signals_cols.txt").write_text(",".join(self.items) + "\n")

        self._summary_demand = np.zeros(self.C, dtype=np.int64)
        self._summary_served = np.zeros(self.C, dtype=np.int64)
        self._summary_newb = np.zeros(self.C, dtype=np.int64)

    def on_step(self, rec: StepRecord) -> None:
        b = self._buffers
        b["demand"].append(rec.demand)
        b["served"].append(rec.served)
        b["newb"].append(rec.new_backlog)
        b["oh"].append(rec.oh_end)
        b["backlog"].append(rec.backlog_end)
        b["it"].append(rec.it_total_end)
        self._shipments.extend(rec.shipments)
        self._src_arrivals.extend((rec.t, n, i, q) for n, i, q in rec.source_arrivals)
        self._summary_demand += rec.demand
        self._summary_served += rec.served
        self._summary_newb += rec.new_backlog
        if len(b["demand"]) >= self.chunk_steps:
            self._flush()

    def finalize(self, summary: RolloutSummary) -> None:
        self._flush()
        self._write_summary()
        for sink in self._files.values():
            sink.close()
        self._write_manifest(summary)
        (self.out_dir / PARTIAL_MARKER).unlink()
        logger.info("release written to %s", self.out_dir)

    # -- internals ------------------------------------------------------------

    def _flush(self) -> None:
        b = self._buffers
        steps = len(b["demand"])
        if steps == 0:
            return
        t0 = self._chunk_start
        days = np.arange(t0, t0 + steps, dtype=np.int64)

        # daily_records: one row per (day, item)
        daily = pd.DataFrame({
            "day": np.repeat(days, self.C),
            "item": pd.Categorical.from_codes(np.tile(self._daily_item_codes, steps), self.items),
            "demand": np.concatenate(b["demand"]),
            "served_from_stock": np.concatenate(b["served"]),
            "new_backlog_today": np.concatenate(b["newb"]),
            "dest_on_hand_end_before_ship": np.stack(b["oh"])[:, self._dst_row, :].reshape(-1),
            "dest_backlog_end_before_ship": np.concatenate(b["backlog"]),
        })
        daily.to_csv(self._files["daily_records.csv"], header=False, index=False,
                     lineterminator="\n")
        self.row_counts["daily_records.csv"] += len(daily)

        # histories: one row per (day, node, item)
        oh = np.stack(b["oh"])                        # (steps, N, C)
        N = oh.shape[1]
        hist_days = np.repeat(days, N * self.C)
        nodes = pd.Categorical.from_codes(np.tile(self._hist_node_codes, steps), self.node_ids)
        hitems = pd.Categorical.from_codes(np.tile(self._hist_item_codes, steps), self.items)
        inv = pd.DataFrame({"day": hist_days, "node": nodes, "item": hitems,
                            "on_hand": oh.reshape(-1)})
        inv.to_csv(self._files["inventory_history.csv"], header=False, index=False,
                   lineterminator="\n")
        self.row_counts["inventory_history.csv"] += len(inv)

        blog = np.zeros((steps, N, self.C), dtype=np.int64)
        blog[:, self._dst_row, :] = np.stack(b["backlog"])
        bdf = pd.DataFrame({"day": hist_days, "node": nodes, "item": hitems,
                            "backlog": blog.reshape(-1)})
        bdf.to_csv(self._files["backlog_history.csv"], header=False, index=False,
                   lineterminator="\n")
        self.row_counts["backlog_history.csv"] += len(bdf)

        dst_id = self.node_ids[self._dst_row]
        itdf = pd.DataFrame({
            "day": np.repeat(days, self.C),
            "node": pd.Categorical.from_codes(np.zeros(steps * self.C, dtype=np.int32), [dst_id]),
            "item": pd.Categorical.from_codes(np.tile(self._daily_item_codes, steps), self.items),
            "in_transit": np.concatenate(b["it"]),
        })
        itdf.to_csv(self._files["intransit_history.csv"], header=False, index=False,
                    lineterminator="\n")
        self.row_counts["intransit_history.csv"] += len(itdf)

        # shipments: manual lines (the two list-literal columns are the only
        # quoted fields in the release)
        ship_sink = self._files["shipments.csv"]
        cache = self._route_cache
        lines = []
        for s in self._shipments:
            route = cache.get(s.path)
            if route is None:
                route = ('"' + repr(list(s.path)) + '"', '"' + repr(list(s.edge_times)) + '"')
                cache[s.path] = route
            lines.append(f"{s.day},{s.arrival_day},{s.src},{s.dst},{self.items[s.item]},"
                         f"{s.units},{route[0]},{route[1]}\n")
        ship_sink.write("".join(lines))
        self.row_counts["shipments.csv"] += len(lines)

        sa_sink = self._files["source_arrivals.csv"]
        sa_lines = [f"{t},{n},{self.items[i]},{q}\n" for t, n, i, q in self._src_arrivals]
        sa_sink.write("".join(sa_lines))
        self.row_counts["source_arrivals.csv"] += len(sa_lines)

        for lst in b.values():
            lst.clear()
        self._shipments.clear()
        self._src_arrivals.clear()
        self._chunk_start = t0 + steps

    def _write_summary(self) -> None:
        sink = _HashedText(self.out_dir / "service_summary.csv")
        sink.write(SUMMARY_HEADER + "\n")
        for i, label in enumerate(self.items):
            total = int(self._summary_demand[i])
            served = int(self._summary_served[i])
            fill = served / total if total else 1.0
            sink.write(f"{label},{total},{served},{int(self._summary_newb[i])},{fill:.6f}\n")
        sink.close()
        self._files["service_summary.csv"] = sink
        self.row_counts["service_summary.csv"] = self.C

    def _write_manifest(self, summary: RolloutSummary) -> None:
        sim = self.sim
        checksums = {name: sink.sha.hexdigest() for name, sink in self._files.items()}
        for name in ("demand_signals.npy", "demand_signals_cols.txt"):
            checksums[name] = hashlib.sha256((self.out_dir / name).read_bytes()).hexdigest()
        manifest = {
            "format": "release-v1",
            "generator": f"echelon {__version__}",
            "config": serialize_config(sim.cfg),
            "materialized": {
                "node_roles": {n.id: n.role for n in sim.network.nodes},
                "node_tiers": {n.id: n.tier for n in sim.network.nodes},
                "edge_volumes": {f"{e.src}->{e.dst}": e.volume for e in sim.network.edges},
                "edge_containers": {f"{e.src}->{e.dst}": e.containers for e in sim.network.edges},
                "lambda_bar": [c.base_rate for c in sim.tensor.coeffs],
                "unit_volumes": sim.unit_volumes.tolist(),
                "mean_intensity": sim.tensor.mean_intensity(),
            },
            "totals": {
                "demand": summary.total_demand,
                "served": summary.total_served,
                "fill_rate": summary.fill_rate,
            },
            "row_counts": self.row_counts,
            "checksums": checksums,
            "extensions": ["manifest.json", "source_arrivals.csv"],
        }
        (self.out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_release(cfg: RunConfig, out_dir: str | Path,
                  progress_every: int = 0) -> tuple[RolloutSummary, dict]:
    """Run one rollout and stream every release artifact into ``out_dir``."""
    writer = ReleaseWriter(out_dir)
    try:
        summary, _ = run_rollout(cfg, writer, progress_every=progress_every)
    except Exception:
        logger.error("rollout aborted; %s left in %s", PARTIAL_MARKER, out_dir)
        raise
    manifest = json.loads((Path(out_dir) / MANIFEST_NAME).read_text())
    return summary, manifest


# -- reading -------------------------------------------------------------------


@dataclass
class ReleaseData:
    """Parsed release with schema validation already applied."""

    path: Path
    items: list[str]
    horizon: int
    node_order: list[str]
    destination: str
    manifest: dict | None
    daily: pd.DataFrame
    shipments: pd.DataFrame
    inventory: pd.DataFrame
    backlog: pd.DataFrame
    intransit: pd.DataFrame
    summary: pd.DataFrame
    rates: np.ndarray
    source_arrivals: pd.DataFrame | None = None
    roles: dict[str, str] = field(default_factory=dict)

    @property
    def C(self) -> int:
        return len(self.items)

    def item_index(self) -> dict[str, int]:
        return {label: i for i, label in enumerate(self.items)}

    def demand_matrix(self) -> np.ndarray:
        return self.daily["demand"].to_numpy().reshape(self.horizon, self.C)


_EXPECTED_HEADERS = {
    "daily_records.csv": DAILY_HEADER,
    "shipments.csv": SHIPMENTS_HEADER,
    "inventory_history.csv": INVENTORY_HEADER,
    "backlog_history.csv": BACKLOG_HEADER,
    "intransit_history.csv": INTRANSIT_HEADER,
    "service_summary.csv": SUMMARY_HEADER,
}


def _check_header(path: Path) -> None:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
    expected = _EXPECTED_HEADERS[path.name]
    if header != expected:
        raise ReleaseError(f"{path.name}: header {header!r} != expected {expected!r}")


def read_release(path: str | Path) -> ReleaseData:
    """Parse and validate a release directory against the published schema."""
    root = Path(path)
    if not root.is_dir():
        raise ReleaseError(f"{root} is not a directory")
    if (root / PARTIAL_MARKER).exists():
        raise ReleaseError(f"{root} contains {PARTIAL_MARKER}: incomplete rollout")
    for name in ALL_FILES:
        if not (root / name).exists():
            raise ReleaseError(f"{root} is missing {name}")
    for name in CSV_FILES:
        _check_header(root / name)

    sidecar = (root / "demand_signals_cols.txt").read_text().strip()
    items = sidecar.split(",") if sidecar else []
    if not items:
        raise ReleaseError("demand_signals_cols.txt is empty")
    C = len(items)

    rates = np.load(root / "demand_signals.npy")
    if rates.ndim != 2 or rates.shape[1] != C or rates.dtype != np.float64:
        raise ReleaseError(
            f"demand_signals.npy: expected float64 (T, {C}) array, got {rates.dtype} {rates.shape}")
    T = rates.shape[0]

    daily = pd.read_csv(root / "daily_records.csv")
    if len(daily) != T * C:
        raise ReleaseError(f"daily_records.csv: {len(daily)} rows, expected T*C = {T * C}")
    summary = pd.read_csv(root / "service_summary.csv")
    if len(summary) != C:
        raise ReleaseError(f"service_summary.csv: {len(summary)} rows, expected C = {C}")
    inventory = pd.read_csv(root / "inventory_history.csv")
    backlog = pd.read_csv(root / "backlog_history.csv")
    if len(inventory) % (T * C) != 0:
        raise ReleaseError(f"inventory_history.csv: {len(inventory)} rows, not T*C*N for integer N")
    N = len(inventory) // (T * C)
    for name, frame in (("inventory_history.csv", inventory), ("backlog_history.csv", backlog)):
        if len(frame) != T * N * C:
            raise ReleaseError(f"{name}: {len(frame)} rows, expected T*N*C = {T * N * C}")
    intransit = pd.read_csv(root / "intransit_history.csv")
    if len(intransit) != T * C:
        raise ReleaseError(f"intransit_history.csv: {len(intransit)} rows, expected T*C = {T * C}")
    shipments = pd.read_csv(root / "shipments.csv")

    for name, frame, int_cols in (
        ("daily_records.csv", daily,
         ["day", "demand", "served_from_stock", "new_backlog_today",
          "dest_on_hand_end_before_ship", "dest_backlog_end_before_ship"]),
        ("inventory_history.csv", inventory, ["day", "on_hand"]),
        ("backlog_history.csv", backlog, ["day", "backlog"]),
        ("intransit_history.csv", intransit, ["day", "in_transit"]),
        ("shipments.csv", shipments, ["day", "arrival_day", "units"]),
    ):
        for col in int_cols:
            if not pd.api.types.is_integer_dtype(frame[col]):
                raise ReleaseError(f"{name}: column {col} is not integer-typed")

    node_order = list(dict.fromkeys(inventory["node"].iloc[: max(N * C, 1)].tolist()))
    if len(node_order) != N:
        node_order = list(dict.fromkeys(inventory["node"].tolist()))
    destination = str(intransit["node"].iloc[0])

    manifest = None
    manifest_path = root / MANIFEST_NAME
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    roles = dict(manifest["materialized"]["node_roles"]) if manifest else _infer_roles(
        shipments, node_order, destination)

    src_path = root / "source_arrivals.csv"
    source_arrivals = pd.read_csv(src_path) if src_path.exists() else None

    return ReleaseData(
        path=root, items=items, horizon=T, node_order=node_order, destination=destination,
        manifest=manifest, daily=daily, shipments=shipments, inventory=inventory,
        backlog=backlog, intransit=intransit, summary=summary, rates=rates,
        source_arrivals=source_arrivals, roles=roles,
    )


def rewrite_release(rel: ReleaseData, out_dir: str | Path) -> None:
    """Re-emit a parsed release in the canonical serialization.

    Writing a release, reading it back, and rewriting it produces
    byte-identical files; useful for normalizing externally produced data.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, frame in (("daily_records.csv", rel.daily),
                        ("inventory_history.csv", rel.inventory),
                        ("backlog_history.csv", rel.backlog),
                        ("intransit_history.csv", rel.intransit)):
        frame.to_csv(out / name, index=False, lineterminator="\n")

    with open(out / "shipments.csv", "w", newline="") as fh:
        fh.write(SHIPMENTS_HEADER + "\n")
        cols = ["day", "arrival_day", "from", "to", "item", "units",
                "path_nodes", "edge_times"]
        for day, arr, src, dst, item, units, path, times in rel.shipments[cols].itertuples(index=False):
            fh.write(f'{day},{arr},{src},{dst},{item},{units},"{path}","{times}"\n')

    with open(out / "service_summary.csv", "w", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for item, total, served, newb, fill in rel.summary[
                ["item", "total_demand", "served_from_stock", "new_backlog_added",
                 "fill_rate_stock_only"]].itertuples(index=False):
            fh.write(f"{item},{total},{served},{newb},{fill:.6f}\n")

    np.save(out / "demand_signals.npy", rel.rates)
    (out / "demand_signals_cols.txt").write_text(",".join(rel.items) + "\n")
    if rel.source_arrivals is not None:
        rel.source_arrivals.to_csv(out / "source_arrivals.csv", index=False, lineterminator="\n")
    if rel.manifest is not None:
        (out / MANIFEST_NAME).write_text(json.dumps(rel.manifest, indent=2, sort_keys=True) + "\n")


def _infer_roles(shipments: pd.DataFrame, node_order: list[str], destination: str) -> dict[str, str]:
    # without a manifest: nodes that never receive a shipment are sources
    receivers = set(shipments["to"].unique())
    roles = {}
    for n in node_order:
        if n == destination:
            roles[n] = "destination"
        elif n in receivers:
            roles[n] = "intermediate"
        else:
            roles[n] = "source"
    return roles
