"""Directed routing graph: topology, transport attributes, and routing tables.

The graph is a DAG from source factories through intermediate warehouses to a
single customer-facing destination. Two weight conventions are used on it:
dispatch ordering/paths use ``transit / (containers * volume)`` (short paths
with high per-step capacity win), pull ordering/paths use plain transit time.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field, replace

logger = logging.getLogger(__name__)

SOURCE = "source"
INTERMEDIATE = "intermediate"
DESTINATION = "destination"

# Back-solve constants for the last-mile edges: mean item volume (distribution
# midpoint, kept instead of the realized sample mean so the result depends on
# the rate tensor only), target load factor, and packing-waste allowance.
MEAN_ITEM_VOLUME = 2.5
LOAD_FACTOR = 1.20
PACKING_EFFICIENCY = 0.93
LASTMILE_SPLIT = 0.55


class NetworkError(ValueError):
    """Raised when a network fails structural validation."""


@dataclass(frozen=True)
class Node:
    id: str
    role: str
    tier: str = ""
    coords: tuple[float, float] | None = None


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    transit: int
    containers: int
    volume: float | None = None          # per-container volume, None until resolved
    volume_per_item: float | None = None # scales with catalogue size
    backsolved: bool = False             # sized from realized mean demand

    @property
    def key(self) -> tuple[str, str]:
        return (self.src, self.dst)


@dataclass
class NetworkSpec:
    nodes: list[Node]
    edges: list[Edge]

    def __post_init__(self) -> None:
        self.validate()

    # -- lookups ---------------------------------------------------------

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    @property
    def destination(self) -> str:
        return next(n.id for n in self.nodes if n.role == DESTINATION)

    @property
    def sources(self) -> list[str]:
        return [n.id for n in self.nodes if n.role == SOURCE]

    @property
    def intermediates(self) -> list[str]:
        return [n.id for n in self.nodes if n.role == INTERMEDIATE]

    def node(self, node_id: str) -> Node:
        return next(n for n in self.nodes if n.id == node_id)

    def edge(self, src: str, dst: str) -> Edge:
        return next(e for e in self.edges if e.src == src and e.dst == dst)

    def out_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node_id]

    def in_edges(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.dst == node_id]

    @property
    def resolved(self) -> bool:
        return all(e.volume is not None for e in self.edges)

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        ids = self.node_ids
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate node ids")
        destinations = [n.id for n in self.nodes if n.role == DESTINATION]
        if len(destinations) != 1:
            raise NetworkError(f"expected exactly one destination node, got {destinations}")
        if not any(n.role == SOURCE for n in self.nodes):
            raise NetworkError("network has no source node")
        known = set(ids)
        for e in self.edges:
            if e.src not in known or e.dst not in known:
                raise NetworkError(f"edge {e.src}->{e.dst} references unknown node")
            if not (isinstance(e.transit, int) and e.transit >= 1):
                raise NetworkError(f"edge {e.src}->{e.dst}: transit must be an integer >= 1")
            if e.containers < 1:
                raise NetworkError(f"edge {e.src}->{e.dst}: container count must be >= 1")
            if e.volume is not None and e.volume <= 0:
                raise NetworkError(f"edge {e.src}->{e.dst}: volume must be positive")
        self._check_dag()
        self._check_coverage()

    def _check_dag(self) -> None:
        indeg = {n: 0 for n in self.node_ids}
        for e in self.edges:
            indeg[e.dst] += 1
        queue = sorted(n for n, d in indeg.items() if d == 0)
        seen = 0
        while queue:
            u = queue.pop()
            seen += 1
            for e in self.out_edges(u):
                indeg[e.dst] -= 1
                if indeg[e.dst] == 0:
                    queue.append(e.dst)
        if seen != len(self.nodes):
            raise NetworkError("network graph has a cycle")

    def _check_coverage(self) -> None:
        # every node must sit on some source -> destination path
        fwd: dict[str, set[str]] = {n: set() for n in self.node_ids}
        back: dict[str, set[str]] = {n: set() for n in self.node_ids}
        for e in self.edges:
            fwd[e.src].add(e.dst)
            back[e.dst].add(e.src)
        from_sources = _reachable(set(self.sources), fwd)
        to_dest = _reachable({self.destination}, back)
        for n in self.node_ids:
            if n not in from_sources:
                raise NetworkError(f"node {n} is not reachable from any source")
            if n not in to_dest:
                raise NetworkError(f"node {n} has no path to the destination")


def _reachable(start: set[str], adj: dict[str, set[str]]) -> set[str]:
    seen = set(start)
    stack = list(start)
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


# -- shortest paths ------------------------------------------------------


def dijkstra(
    spec: NetworkSpec, target: str, weight_fn, reverse: bool = True
) -> tuple[dict[str, float], dict[str, list[str]]]:
    """Distances and resolved paths to ``target`` (or from it if not reversed).

    Deterministic: the heap orders by (distance, node id) and relaxations are
    strict, so equal-cost alternatives resolve the same way on every run.
    """
    adj: dict[str, list[tuple[str, float]]] = {n: [] for n in spec.node_ids}
    for e in spec.edges:
        w = weight_fn(e)
        if reverse:
            adj[e.dst].append((e.src, w))
        else:
            adj[e.src].append((e.dst, w))
    for lst in adj.values():
        lst.sort()
    dist = {target: 0.0}
    pred: dict[str, str] = {}
    heap: list[tuple[float, str]] = [(0.0, target)]
    done: set[str] = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, w in adj[u]:
            nd = d + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, v))
    paths: dict[str, list[str]] = {}
    for n in dist:
        hops = [n]
        while hops[-1] != target:
            hops.append(pred[hops[-1]])
        # reversed graph: hops already run node -> target; forward graph: flip
        paths[n] = hops if reverse else hops[::-1]
    return dist, paths


def _dispatch_weight(e: Edge) -> float:
    return e.transit / (e.containers * e.volume)


def _transit_weight(e: Edge) -> float:
    return float(e.transit)


@dataclass(frozen=True)
class PullRoute:
    supplier: str
    path: tuple[str, ...]   # supplier .. puller
    total_transit: float


@dataclass
class RoutingTables:
    """Deterministic routing state shared by every step of a rollout."""

    dispatch_dist: dict[str, float]
    dispatch_path: dict[str, list[str]]            # warehouse .. destination
    dispatch_order: list[str]                      # warehouses, nearest first
    pull_order: dict[str, list[PullRoute]]         # per intermediate node
    upstream_rank: list[str] = field(default_factory=list)


def build_routing(spec: NetworkSpec) -> RoutingTables:
    """Build all routing tables for a fully volume-resolved network."""
    if not spec.resolved:
        raise NetworkError("cannot build routing before all edge volumes are resolved")
    dest = spec.destination

    cap_dist, cap_paths = dijkstra(spec, dest, _dispatch_weight, reverse=True)
    for w in spec.intermediates:
        if w not in cap_dist:
            raise NetworkError(f"warehouse {w} cannot reach the destination")
    dispatch_order = sorted(spec.intermediates, key=lambda n: (cap_dist[n], n))

    if logger.isEnabledFor(logging.DEBUG):
        _, transit_paths = dijkstra(spec, dest, _transit_weight, reverse=True)
        for w in dispatch_order:
            if transit_paths.get(w) != cap_paths[w]:
                logger.debug(
                    "dispatch path for %s: capacity-weight %s vs transit-weight %s",
                    w, cap_paths[w], transit_paths.get(w),
                )

    pull_order: dict[str, list[PullRoute]] = {}
    for n in spec.intermediates:
        # ancestors of n under plain transit weight, nearest first
        tdist, tpaths = dijkstra(spec, n, _transit_weight, reverse=True)
        routes = [
            PullRoute(supplier=u, path=tuple(tpaths[u]), total_transit=tdist[u])
            for u in tdist
            if u != n and spec.node(u).role in (SOURCE, INTERMEDIATE)
        ]
        routes.sort(key=lambda r: (r.total_transit, r.supplier))
        pull_order[n] = routes

    # upstream-first: distance (plain transit) from the nearest source
    src_dist: dict[str, float] = {}
    for s in spec.sources:
        d, _ = dijkstra(spec, s, _transit_weight, reverse=False)
        for n, v in d.items():
            if n not in src_dist or v < src_dist[n]:
                src_dist[n] = v
    upstream_rank = sorted(spec.intermediates, key=lambda n: (src_dist.get(n, math.inf), n))

    return RoutingTables(
        dispatch_dist={w: cap_dist[w] for w in spec.intermediates},
        dispatch_path={w: list(cap_paths[w]) for w in spec.intermediates},
        dispatch_order=dispatch_order,
        pull_order=pull_order,
        upstream_rank=upstream_rank,
    )


# -- last-mile back-solve --------------------------------------------------


def backsolve_lastmile(
    spec: NetworkSpec,
    catalogue_size: int,
    mean_intensity: float,
    *,
    mean_item_volume: float = MEAN_ITEM_VOLUME,
    load_factor: float = LOAD_FACTOR,
    packing_efficiency: float = PACKING_EFFICIENCY,
    split: float = LASTMILE_SPLIT,
) -> NetworkSpec:
    """Size the marked last-mile edges from the realized mean demand rate.

    The combined per-step volume target is ``C * mean_rate * mean_item_volume
    * load_factor / packing_efficiency``; it is split between the (up to two)
    marked edges in declaration order, divided by each edge's container count,
    and rounded to the nearest 100 with a floor of 100.
    """
    marked = [e for e in spec.edges if e.backsolved]
    if not marked:
        logger.warning("back-solve requested but no edge carries the back-solved marker")
        return spec
    if len(marked) > 2:
        raise NetworkError("back-solve supports at most two marked last-mile edges")

    v_raw = catalogue_size * mean_intensity * mean_item_volume * load_factor / packing_efficiency
    shares = [1.0] if len(marked) == 1 else [split, 1.0 - split]

    resolved: dict[tuple[str, str], float] = {}
    for e, share in zip(marked, shares):
        per_container = share * v_raw / e.containers
        vol = max(100.0, math.floor(per_container / 100.0 + 0.5) * 100.0)
        resolved[e.key] = vol
        logger.info("back-solved %s->%s: share %.2f, per-container volume %.0f", e.src, e.dst, share, vol)

    edges = [
        replace(e, volume=resolved[e.key], backsolved=False) if e.key in resolved else e
        for e in spec.edges
    ]
    return NetworkSpec(nodes=list(spec.nodes), edges=edges)
