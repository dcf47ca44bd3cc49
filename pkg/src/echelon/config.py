"""Run configuration: structural parameters, scenario knobs, and policies.

A run is defined by a structured-text (YAML) document with five optional
sections -- ``structural``, ``demand``, ``inventory``, ``transport``,
``network`` -- where any absent field takes its baseline value. Knob
application order is fixed: range override, then multiplicative scale, then
integer rounding, then clipping.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .network import Edge, NetworkSpec, Node
from .rng import stream

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised on unparseable or inconsistent configuration input."""


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# -- scenario knobs --------------------------------------------------------


@dataclass
class DemandKnobs:
    base_rate_range: tuple[float, float] = (80.0, 250.0)
    yearly_amp1_range: tuple[float, float] = (0.12, 0.28)
    yearly_amp2_range: tuple[float, float] = (0.04, 0.10)
    weekly_amp_range: tuple[float, float] = (0.04, 0.10)
    ar_coeff_range: tuple[float, float] = (0.9990, 0.9996)
    ar_coeff_override: float | None = None   # single shared AR(1) coefficient
    ar_sigma_range: tuple[float, float] = (0.008, 0.018)
    ar_init_sd: float = 0.10
    burst_rate_range: tuple[float, float] = (2e-4, 1e-3)
    burst_rate_mult: float = 1.0
    burst_duration_range: tuple[int, int] = (30, 179)
    burst_height_range: tuple[float, float] = (0.20, 0.70)
    burst_height_mult: float = 1.0
    shock_count_range: tuple[int, int] = (5, 11)
    shock_count_mult: float = 1.0
    shock_duration_range: tuple[int, int] = (180, 1099)
    shock_height_range: tuple[float, float] = (0.20, 0.60)
    shock_height_mult: float = 1.0
    sensitivity_range: tuple[float, float] = (0.4, 1.2)
    unit_volume_range: tuple[float, float] = (1.0, 4.0)


@dataclass
class InventoryKnobs:
    ss_scale: float = 1.0        # multiplies s, S, and initial inventory
    lead_time_scale: float = 1.0  # multiplies source lead-time means


@dataclass
class TransportKnobs:
    container_count_scale: float = 1.0
    load_factor: float = 1.20
    packing_efficiency: float = 0.93
    lastmile_split: float = 0.55


@dataclass
class ScenarioKnobs:
    demand: DemandKnobs = field(default_factory=DemandKnobs)
    inventory: InventoryKnobs = field(default_factory=InventoryKnobs)
    transport: TransportKnobs = field(default_factory=TransportKnobs)

    def validate(self) -> None:
        d = self.demand
        for name in (
            "base_rate_range", "yearly_amp1_range", "yearly_amp2_range",
            "weekly_amp_range", "ar_coeff_range", "ar_sigma_range",
            "burst_rate_range", "burst_duration_range", "burst_height_range",
            "shock_count_range", "shock_duration_range", "shock_height_range",
            "sensitivity_range", "unit_volume_range",
        ):
            lo, hi = getattr(d, name)
            if lo > hi:
                raise ConfigError(f"demand.{name}: lower bound {lo} exceeds upper bound {hi}")
        # count/rate multipliers may be zero (a sweep setting of 0 disables the
        # component); height multipliers must stay positive
        if d.burst_height_mult <= 0 or d.shock_height_mult <= 0:
            raise ConfigError("demand height multipliers must be positive")
        if d.shock_count_mult < 0 or d.burst_rate_mult < 0:
            raise ConfigError("demand count/rate multipliers must be non-negative")
        if self.inventory.ss_scale <= 0 or self.inventory.lead_time_scale <= 0:
            raise ConfigError("inventory scales must be positive")
        t = self.transport
        if t.container_count_scale <= 0:
            raise ConfigError("transport.container_count_scale must be positive")
        if t.load_factor <= 0 or not (0 < t.packing_efficiency <= 1):
            raise ConfigError("transport load factor / packing efficiency out of range")
        if not (0 < t.lastmile_split < 1):
            raise ConfigError("transport.lastmile_split must lie in (0, 1)")


@dataclass
class StructuralParams:
    items: int = 50
    horizon: int = 52560
    seed: int = 2025
    pipeline_multiplier: float = 0.0  # 0 selects the reactive shipping rule
    step_label: str = "day"

    def validate(self) -> None:
        if self.items < 1:
            raise ConfigError("structural.items must be >= 1")
        if self.horizon < 2:
            raise ConfigError("structural.horizon must be >= 2")
        if self.pipeline_multiplier < 0:
            raise ConfigError("structural.pipeline_multiplier must be >= 0")


@dataclass(frozen=True)
class NodePolicy:
    node: str
    tier: str
    init: tuple[float, float]       # base, var
    s: tuple[float, float]
    S: tuple[float, float]
    lead_mean: tuple[float, float]  # used at source nodes only


# Per-node inventory policies of the released 13-city network (base, var).
DEFAULT_POLICIES: dict[str, NodePolicy] = {
    p.node: p
    for p in [
        NodePolicy("SanFrancisco", "Source", (4000, 400), (400, 60), (4000, 400), (3, 1)),
        NodePolicy("StLouis", "Source", (4000, 400), (400, 60), (4000, 400), (3, 1)),
        NodePolicy("Orlando", "Source", (4000, 400), (400, 60), (4000, 400), (3, 1)),
        NodePolicy("Nashville", "Hub", (8000, 800), (1000, 150), (8000, 800), (3, 1)),
        NodePolicy("Atlanta", "Tier-2", (6000, 600), (500, 80), (6000, 600), (1, 0)),
        NodePolicy("Chicago", "Tier-3", (5000, 500), (1000, 150), (5000, 500), (8, 1)),
        NodePolicy("Charlotte", "Tier-3", (5000, 500), (1000, 150), (5000, 500), (7, 1)),
        NodePolicy("Memphis", "Tier-3", (3000, 300), (500, 80), (3000, 300), (7, 1)),
        NodePolicy("Columbus", "Tier-4", (4000, 400), (500, 80), (4000, 400), (2, 0)),
        NodePolicy("Richmond", "Tier-4", (4000, 400), (500, 80), (4000, 400), (2, 0)),
        NodePolicy("Philadelphia", "Tier-5 (LM)", (3000, 300), (500, 80), (3000, 300), (1, 0)),
        NodePolicy("Baltimore", "Tier-5 (LM)", (3000, 300), (500, 80), (3000, 300), (2, 0)),
    ]
}

_BASELINE_COORDS = {
    "SanFrancisco": (-122.42, 37.77),
    "StLouis": (-90.20, 38.63),
    "Orlando": (-81.38, 28.54),
    "Nashville": (-86.78, 36.16),
    "Atlanta": (-84.39, 33.75),
    "Chicago": (-87.63, 41.88),
    "Charlotte": (-80.84, 35.23),
    "Memphis": (-90.05, 35.15),
    "Columbus": (-82.99, 39.96),
    "Richmond": (-77.44, 37.54),
    "Philadelphia": (-75.17, 39.95),
    "Baltimore": (-76.61, 39.29),
    "NewYork": (-74.01, 40.71),
}

# Released 16-edge topology. Upstream per-container volumes scale linearly
# with catalogue size (per_item * C); the two last-mile edges are back-solved
# from the realized mean demand rate once the intensity tensor exists.
_BASELINE_EDGES = [
    # (src, dst, transit, per_item_volume or "backsolved")
    ("SanFrancisco", "Nashville", 4, 100.0),
    ("StLouis", "Nashville", 2, 100.0),
    ("Orlando", "Nashville", 2, 100.0),
    ("Nashville", "Atlanta", 1, 300.0),
    ("Atlanta", "Chicago", 8, 80.0),
    ("Atlanta", "Charlotte", 7, 80.0),
    ("Atlanta", "Memphis", 7, 80.0),
    ("Chicago", "Columbus", 2, 80.0),
    ("Charlotte", "Richmond", 2, 80.0),
    ("Columbus", "Philadelphia", 2, 80.0),
    ("Richmond", "Philadelphia", 1, 80.0),
    ("Richmond", "Baltimore", 3, 60.0),
    ("Columbus", "Baltimore", 3, 60.0),
    ("Memphis", "Baltimore", 2, 60.0),
    ("Philadelphia", "NewYork", 1, "backsolved"),
    ("Baltimore", "NewYork", 2, "backsolved"),
]


def baseline_network_dict() -> dict:
    nodes = []
    for pid, pol in DEFAULT_POLICIES.items():
        role = "source" if pol.tier == "Source" else "intermediate"
        nodes.append({"id": pid, "role": role, "tier": pol.tier, "coords": list(_BASELINE_COORDS[pid])})
    nodes.append({"id": "NewYork", "role": "destination", "tier": "Destination",
                  "coords": list(_BASELINE_COORDS["NewYork"])})
    edges = []
    for src, dst, transit, vol in _BASELINE_EDGES:
        e: dict = {"from": src, "to": dst, "transit": transit, "containers": 3}
        if vol == "backsolved":
            e["volume"] = "backsolved"
        else:
            e["volume"] = {"per_item": vol}
        edges.append(e)
    return {"nodes": nodes, "edges": edges}


# -- parsing ---------------------------------------------------------------


def _pair(value, name: str) -> tuple[float, float]:
    if not (isinstance(value, (list, tuple)) and len(value) == 2):
        raise ConfigError(f"{name}: expected a two-element [low, high] range, got {value!r}")
    lo, hi = float(value[0]), float(value[1])
    return (lo, hi)


def _int_pair(value, name: str) -> tuple[int, int]:
    lo, hi = _pair(value, name)
    return (int(lo), int(hi))


def _build_network(section: dict, items: int, container_scale: float) -> NetworkSpec:
    nodes = []
    for raw in section["nodes"]:
        coords = raw.get("coords")
        nodes.append(Node(
            id=str(raw["id"]),
            role=str(raw["role"]),
            tier=str(raw.get("tier", "")),
            coords=tuple(float(c) for c in coords) if coords else None,
        ))
    edges = []
    for raw in section["edges"]:
        vol = raw.get("volume")
        volume = None
        per_item = None
        backsolved = False
        if vol == "backsolved":
            backsolved = True
        elif isinstance(vol, dict) and "per_item" in vol:
            per_item = float(vol["per_item"])
            volume = per_item * items
        elif vol is None:
            raise ConfigError(f"edge {raw.get('from')}->{raw.get('to')}: missing volume")
        else:
            volume = float(vol)
        if volume is not None and volume <= 0:
            raise ConfigError(f"edge {raw.get('from')}->{raw.get('to')}: volume must be positive")
        containers = int(raw.get("containers", 3))
        containers = max(1, round_half_up(containers * container_scale))
        edges.append(Edge(
            src=str(raw["from"]),
            dst=str(raw["to"]),
            transit=int(raw["transit"]),
            containers=containers,
            volume=volume,
            volume_per_item=per_item,
            backsolved=backsolved,
        ))
    try:
        return NetworkSpec(nodes=nodes, edges=edges)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _apply_section(obj, section: dict, name: str):
    known = set(asdict(obj).keys())
    updates = {}
    for key, value in section.items():
        if key not in known:
            raise ConfigError(f"unknown field {name}.{key}")
        current = getattr(obj, key)
        if isinstance(current, tuple) and len(current) == 2:
            caster = _int_pair if all(isinstance(c, int) for c in current) else _pair
            updates[key] = caster(value, f"{name}.{key}")
        elif value is None:
            updates[key] = None
        elif isinstance(current, bool):
            updates[key] = bool(value)
        elif isinstance(current, int) and not isinstance(current, bool):
            updates[key] = int(value)
        elif isinstance(current, float) or current is None:
            updates[key] = float(value)
        else:
            updates[key] = type(current)(value) if current is not None else value
    return replace(obj, **updates)


def _parse_policies(section: dict) -> dict[str, NodePolicy]:
    policies = dict(DEFAULT_POLICIES)
    for node, raw in (section or {}).items():
        base = policies.get(node)
        policies[node] = NodePolicy(
            node=node,
            tier=str(raw.get("tier", base.tier if base else "")),
            init=_pair(raw["init"], f"policies.{node}.init") if "init" in raw else base.init,
            s=_pair(raw["s"], f"policies.{node}.s") if "s" in raw else base.s,
            S=_pair(raw["S"], f"policies.{node}.S") if "S" in raw else base.S,
            lead_mean=_pair(raw["lead_mean"], f"policies.{node}.lead_mean")
            if "lead_mean" in raw else base.lead_mean,
        )
    return policies


@dataclass
class RunConfig:
    """Fully defaulted and validated configuration for one run."""

    params: StructuralParams
    knobs: ScenarioKnobs
    network: NetworkSpec
    policies: dict[str, NodePolicy]

    def echo(self) -> dict:
        return serialize_config(self)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Load a run configuration, filling absent fields with baseline values.

    ``overrides`` maps dotted keys (``"structural.seed"``) to values and is
    applied after the file, so CLI ``--set`` flags win.
    """
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be a mapping, got {type(loaded).__name__}")
        doc = loaded
    return config_from_dict(doc, overrides)


def config_from_dict(doc: dict, overrides: dict | None = None) -> RunConfig:
    """Build a configuration from an already-parsed document."""
    doc = _deep_copy_doc(doc)
    for key, value in (overrides or {}).items():
        parts = key.split(".")
        cursor = doc
        for part in parts[:-1]:
            cursor = cursor.setdefault(part, {})
            if not isinstance(cursor, dict):
                raise ConfigError(f"override {key}: {part} is not a section")
        cursor[parts[-1]] = value

    unknown = set(doc) - {"structural", "demand", "inventory", "transport", "network"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    params = _apply_section(StructuralParams(), doc.get("structural", {}), "structural")
    params.validate()

    inv_section = dict(doc.get("inventory", {}))
    policies = _parse_policies(inv_section.pop("policies", {}))
    knobs = ScenarioKnobs(
        demand=_apply_section(DemandKnobs(), doc.get("demand", {}), "demand"),
        inventory=_apply_section(InventoryKnobs(), inv_section, "inventory"),
        transport=_apply_section(TransportKnobs(), doc.get("transport", {}), "transport"),
    )
    knobs.validate()

    net_section = doc.get("network") or baseline_network_dict()
    network = _build_network(net_section, params.items, knobs.transport.container_count_scale)

    for node in network.nodes:
        if node.role != "destination" and node.id not in policies:
            raise ConfigError(f"no inventory policy for node {node.id}")

    return RunConfig(params=params, knobs=knobs, network=network, policies=policies)


def _deep_copy_doc(doc: dict) -> dict:
    out = {}
    for k, v in doc.items():
        if isinstance(v, dict):
            out[k] = _deep_copy_doc(v)
        elif isinstance(v, list):
            out[k] = [dict(x) if isinstance(x, dict) else x for x in v]
        else:
            out[k] = v
    return out


def merge_patch(doc: dict, patch: dict) -> dict:
    """Recursively merge a partial config document into ``doc`` (patch wins)."""
    out = _deep_copy_doc(doc)
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge_patch(out[k], v)
        else:
            out[k] = v
    return out


def serialize_config(cfg: RunConfig) -> dict:
    """Plain-dict echo of a configuration; re-loadable via :func:`load_config`."""
    network = {
        "nodes": [
            {"id": n.id, "role": n.role, "tier": n.tier,
             **({"coords": list(n.coords)} if n.coords else {})}
            for n in cfg.network.nodes
        ],
        "edges": [
            {"from": e.src, "to": e.dst, "transit": e.transit, "containers": e.containers,
             "volume": "backsolved" if e.backsolved
             else ({"per_item": e.volume_per_item} if e.volume_per_item is not None else e.volume)}
            for e in cfg.network.edges
        ],
    }
    inventory = asdict(cfg.knobs.inventory)
    inventory["policies"] = {
        p.node: {"tier": p.tier, "init": list(p.init), "s": list(p.s),
                 "S": list(p.S), "lead_mean": list(p.lead_mean)}
        for p in cfg.policies.values()
    }
    return {
        "structural": asdict(cfg.params),
        "demand": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(cfg.knobs.demand).items()},
        "inventory": inventory,
        "transport": asdict(cfg.knobs.transport),
        "network": network,
    }


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(serialize_config(cfg), sort_keys=False))


def parse_override(text: str):
    """Parse one CLI ``key=value`` override; the value goes through YAML typing."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, _, raw = text.partition("=")
    return key.strip(), yaml.safe_load(raw)


# -- policy materialization --------------------------------------------------


@dataclass
class PolicyTable:
    """Realized per-(node, item) inventory parameters, aligned to node order."""

    node_ids: list[str]
    init: np.ndarray   # (N, C) int64
    s: np.ndarray      # (N, C) int64
    S: np.ndarray      # (N, C) int64
    mu: np.ndarray     # (N, C) int64; meaningful at source nodes only

    def row(self, node_id: str) -> int:
        return self.node_ids.index(node_id)


def materialize_policies(cfg: RunConfig) -> PolicyTable:
    """Draw the per-(node, item) (init, s, S, mu) table once at construction.

    Each value is base + U[-var, var], scaled by the inventory knobs, rounded
    half-up, then clipped so 0 <= s < S and s <= init <= S.
    """
    net = cfg.network
    C = cfg.params.items
    N = len(net.nodes)
    init = np.zeros((N, C), dtype=np.int64)
    s_arr = np.zeros((N, C), dtype=np.int64)
    S_arr = np.zeros((N, C), dtype=np.int64)
    mu = np.zeros((N, C), dtype=np.int64)

    ss_scale = cfg.knobs.inventory.ss_scale
    lt_scale = cfg.knobs.inventory.lead_time_scale

    for n_idx, node in enumerate(net.nodes):
        if node.role == "destination":
            continue
        pol = cfg.policies[node.id]
        for name, (base, var) in (("init", pol.init), ("s", pol.s), ("S", pol.S)):
            if var >= base > 0:
                logger.warning("policy %s.%s: var %.0f >= base %.0f, clipping at 0 may be frequent",
                               node.id, name, var, base)
        for i in range(C):
            gen = stream(cfg.params.seed, "policy", node.id, i)
            raw_init = pol.init[0] + gen.uniform(-pol.init[1], pol.init[1])
            raw_s = pol.s[0] + gen.uniform(-pol.s[1], pol.s[1])
            raw_S = pol.S[0] + gen.uniform(-pol.S[1], pol.S[1])
            raw_mu = pol.lead_mean[0] + gen.uniform(-pol.lead_mean[1], pol.lead_mean[1])

            v_s = max(0, round_half_up(raw_s * ss_scale))
            v_S = max(1, round_half_up(raw_S * ss_scale))
            if v_s >= v_S:
                v_s = v_S - 1
            v_init = min(max(round_half_up(raw_init * ss_scale), v_s), v_S)
            init[n_idx, i] = v_init
            s_arr[n_idx, i] = v_s
            S_arr[n_idx, i] = v_S
            mu[n_idx, i] = max(1, round_half_up(raw_mu * lt_scale))

    return PolicyTable(node_ids=net.node_ids, init=init, s=s_arr, S=S_arr, mu=mu)
