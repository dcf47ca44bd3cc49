"""Batch orchestration: one-at-a-time sweeps, named scenario presets,
Latin-hypercube forward-UQ ensembles, and forecast scoring.

Sweeps perturb a single knob across five settings (the baseline setting is
shared with the main release rather than re-simulated). The UQ ensemble
varies three demand-side knobs jointly; its output is a pointwise
min/median/max envelope over the member demand series. Externally produced
forecast files are scored with the scaled-error metric against any release.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from .config import RunConfig, config_from_dict, serialize_config
from .dataset import ReleaseData, read_release, write_release
from .rng import stream

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"

# forward-UQ baseline: +-20% around baseline on three demand-side knobs
UQ_INTERVALS = {
    "ar_coeff": (0.99916, 0.99944),
    "shock_height_scale": (0.80, 1.20),
    "burst_height_scale": (0.80, 1.20),
}
UQ_DEFAULT_K = 20


@dataclass(frozen=True)
class SweepSetting:
    label: str
    overrides: dict
    baseline: bool = False


@dataclass(frozen=True)
class SweepSpec:
    name: str
    knob: str
    settings: tuple[SweepSetting, ...]

    @property
    def baseline_label(self) -> str:
        return next(s.label for s in self.settings if s.baseline)


def _sweep(name: str, knob: str, rows: list[tuple[str, dict, bool]]) -> SweepSpec:
    return SweepSpec(name, knob, tuple(SweepSetting(l, o, b) for l, o, b in rows))


SWEEPS: dict[str, SweepSpec] = {
    spec.name: spec
    for spec in [
        _sweep("drift", "ar_coeff", [
            ("phi_0.71", {"demand.ar_coeff_override": 0.71}, False),
            ("phi_0.86", {"demand.ar_coeff_override": 0.86}, False),
            ("phi_0.96", {"demand.ar_coeff_override": 0.96}, False),
            ("phi_0.99", {"demand.ar_coeff_override": 0.99}, False),
            ("baseline", {}, True),
        ]),
        _sweep("shock", "shock_count_x_height", [
            ("0x1", {"demand.shock_count_mult": 0.0, "demand.shock_height_mult": 1.0}, False),
            ("0.5x0.7", {"demand.shock_count_mult": 0.5, "demand.shock_height_mult": 0.7}, False),
            ("baseline", {}, True),
            ("2x2", {"demand.shock_count_mult": 2.0, "demand.shock_height_mult": 2.0}, False),
            ("3x4", {"demand.shock_count_mult": 3.0, "demand.shock_height_mult": 4.0}, False),
        ]),
        _sweep("burst", "burst_rate_x_height", [
            ("baseline", {}, True),
            ("1.5x2", {"demand.burst_rate_mult": 1.5, "demand.burst_height_mult": 2.0}, False),
            ("2x3", {"demand.burst_rate_mult": 2.0, "demand.burst_height_mult": 3.0}, False),
            ("3x4", {"demand.burst_rate_mult": 3.0, "demand.burst_height_mult": 4.0}, False),
            ("5x8", {"demand.burst_rate_mult": 5.0, "demand.burst_height_mult": 8.0}, False),
        ]),
        _sweep("edge_cap", "container_count_scale", [
            ("0.3", {"transport.container_count_scale": 0.3}, False),
            ("0.6", {"transport.container_count_scale": 0.6}, False),
            ("baseline", {}, True),
            ("1.5", {"transport.container_count_scale": 1.5}, False),
            ("2.5", {"transport.container_count_scale": 2.5}, False),
        ]),
        _sweep("buffer", "ss_scale", [
            ("0.1", {"inventory.ss_scale": 0.1}, False),
            ("0.2", {"inventory.ss_scale": 0.2}, False),
            ("0.5", {"inventory.ss_scale": 0.5}, False),
            ("0.75", {"inventory.ss_scale": 0.75}, False),
            ("baseline", {}, True),
        ]),
        _sweep("lead_time", "lead_time_scale", [
            ("baseline", {}, True),
            ("2.0", {"inventory.lead_time_scale": 2.0}, False),
            ("5.0", {"inventory.lead_time_scale": 5.0}, False),
            ("10.0", {"inventory.lead_time_scale": 10.0}, False),
            ("20.0", {"inventory.lead_time_scale": 20.0}, False),
        ]),
    ]
}


def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.yaml"))


def load_preset(name: str) -> dict:
    """Named demand-side scenario as a partial config document."""
    path = PRESET_DIR / f"{name}.yaml"
    if not path.exists():
        raise KeyError(f"unknown scenario preset {name!r}; have {preset_names()}")
    return yaml.safe_load(path.read_text()) or {}


def _run_member(doc: dict, overrides: dict, out_dir: str) -> str:
    cfg = config_from_dict(doc, overrides)
    write_release(cfg, out_dir)
    return out_dir


def run_sweep(sweep: str | SweepSpec, base: RunConfig, out_root: str | Path,
              baseline_release: str | Path | None = None, jobs: int = 1) -> dict[str, str]:
    """One release per non-baseline setting; the baseline is linked, not re-run.

    Per-setting failures are isolated: the failing label maps to an
    ``error:`` entry and the other settings still run.
    """
    spec = SWEEPS[sweep] if isinstance(sweep, str) else sweep
    root = Path(out_root) / spec.name
    root.mkdir(parents=True, exist_ok=True)
    base_doc = serialize_config(base)

    results: dict[str, str] = {}
    tasks = []
    for setting in spec.settings:
        if setting.baseline:
            link = root / setting.label
            if baseline_release is not None:
                target = Path(baseline_release).resolve()
                if link.is_symlink() or link.exists():
                    pass
                else:
                    try:
                        link.symlink_to(target, target_is_directory=True)
                    except OSError:
                        link.mkdir(parents=True, exist_ok=True)
                        (link / "SHARED_BASELINE.txt").write_text(str(target) + "\n")
                results[setting.label] = str(link)
            else:
                results[setting.label] = "shared-with-main-release"
            continue
        tasks.append((setting.label, setting.overrides, str(root / setting.label)))

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {label: pool.submit(_run_member, base_doc, overrides, out_dir)
                       for label, overrides, out_dir in tasks}
            for label, fut in futures.items():
                try:
                    results[label] = fut.result()
                except Exception as exc:
                    logger.error("sweep setting %s failed: %s", label, exc)
                    results[label] = f"error: {exc}"
    else:
        for label, overrides, out_dir in tasks:
            try:
                results[label] = _run_member(base_doc, overrides, out_dir)
            except Exception as exc:
                logger.error("sweep setting %s failed: %s", label, exc)
                results[label] = f"error: {exc}"
    return results


# -- Latin hypercube UQ ----------------------------------------------------------


@dataclass
class LhsDesign:
    names: list[str]
    intervals: list[tuple[float, float]]
    unit: np.ndarray     # (K, D) in [0, 1]
    samples: np.ndarray  # (K, D) mapped to the intervals

    @property
    def K(self) -> int:
        return self.unit.shape[0]


def lhs_sample(K: int, intervals: dict[str, tuple[float, float]], seed: int,
               jitter: float = 0.0) -> LhsDesign:
    """Stratified design: one sample per stratum per dimension, deterministic in seed.

    Strata midpoints by default; ``jitter`` in [0, 1) displaces each point
    uniformly by up to that fraction of the stratum width.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if not 0.0 <= jitter < 1.0:
        raise ValueError("jitter must lie in [0, 1)")
    gen = stream(seed, "lhs")
    names = list(intervals)
    D = len(names)
    unit = np.empty((K, D), dtype=np.float64)
    for d in range(D):
        perm = gen.permutation(K)
        offsets = gen.uniform(-0.5, 0.5, size=K) * jitter
        unit[:, d] = (perm + 0.5 + offsets) / K
    lows = np.array([intervals[n][0] for n in names])
    highs = np.array([intervals[n][1] for n in names])
    for lo, hi in zip(lows, highs):
        if hi < lo:
            raise ValueError(f"interval [{lo}, {hi}] is inverted")
    return LhsDesign(names=names, intervals=[intervals[n] for n in names],
                     unit=unit, samples=lows + unit * (highs - lows))


def _member_overrides(design: LhsDesign, k: int) -> dict:
    """Map one design row to knob overrides (heights carry the two scale knobs)."""
    row = dict(zip(design.names, design.samples[k]))
    overrides = {}
    if "ar_coeff" in row:
        overrides["demand.ar_coeff_override"] = float(row["ar_coeff"])
    if "shock_height_scale" in row:
        overrides["demand.shock_height_mult"] = float(row["shock_height_scale"])
    if "burst_height_scale" in row:
        overrides["demand.burst_height_mult"] = float(row["burst_height_scale"])
    return overrides


def run_uq_ensemble(design: LhsDesign, base: RunConfig, out_root: str | Path,
                    jobs: int = 1) -> dict:
    """K member releases plus a pointwise min/median/max demand envelope."""
    root = Path(out_root)
    root.mkdir(parents=True, exist_ok=True)
    base_doc = serialize_config(base)
    width = len(str(design.K - 1)) if design.K > 1 else 1
    tasks = [(k, _member_overrides(design, k), str(root / f"member_{k:0{width}d}"))
             for k in range(design.K)]

    member_dirs: dict[int, str] = {}
    failures: dict[int, str] = {}
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {k: pool.submit(_run_member, base_doc, overrides, out_dir)
                       for k, overrides, out_dir in tasks}
            for k, fut in futures.items():
                try:
                    member_dirs[k] = fut.result()
                except Exception as exc:
                    logger.error("ensemble member %d failed: %s", k, exc)
                    failures[k] = str(exc)
    else:
        for k, overrides, out_dir in tasks:
            try:
                member_dirs[k] = _run_member(base_doc, overrides, out_dir)
            except Exception as exc:
                logger.error("ensemble member %d failed: %s", k, exc)
                failures[k] = str(exc)

    envelope_path = root / "envelope_summary.csv"
    if member_dirs:
        members = [read_release(member_dirs[k]) for k in sorted(member_dirs)]
        write_envelope(members, envelope_path)

    design_echo = {
        "K": design.K,
        "names": design.names,
        "intervals": design.intervals,
        "samples": design.samples.tolist(),
        "members": {str(k): member_dirs.get(k, f"error: {failures.get(k)}")
                    for k in range(design.K)},
    }
    (root / "design.json").write_text(json.dumps(design_echo, indent=2, sort_keys=True) + "\n")
    return {"members": member_dirs, "failures": failures, "envelope": str(envelope_path)}


def write_envelope(members: list[ReleaseData], path: str | Path) -> None:
    """Collapse K member demand series to per-(step, item) min/median/max rows."""
    first = members[0]
    T, C = first.horizon, first.C
    stack = np.stack([m.demand_matrix() for m in members])  # (K, T, C)
    env_min = stack.min(axis=0)
    env_med = np.median(stack, axis=0)
    env_max = stack.max(axis=0)
    frame = pd.DataFrame({
        "day": np.repeat(np.arange(T), C),
        "item": np.tile(np.array(first.items), T),
        "min": env_min.reshape(-1),
        "median": env_med.reshape(-1),
        "max": env_max.reshape(-1),
    })
    frame.to_csv(path, index=False, lineterminator="\n")


# -- scaled-error forecast scoring ---------------------------------------------


class ForecastFormatError(ValueError):
    pass


@dataclass
class ForecastFile:
    context_length: int
    seasonal_period: int
    horizon: int
    stride: int | None
    rows: pd.DataFrame  # window_start, item, step, value


def read_forecast_file(path: str | Path) -> ForecastFile:
    """Long-form forecast CSV with a leading ``# key: value`` header block."""
    meta: dict[str, str] = {}
    with open(path) as fh:
        pos = fh.tell()
        line = fh.readline()
        while line.startswith("#"):
            body = line[1:].strip()
            if ":" in body:
                key, _, val = body.partition(":")
                meta[key.strip()] = val.strip()
            pos = fh.tell()
            line = fh.readline()
        fh.seek(pos)
        rows = pd.read_csv(fh)
    required = {"window_start", "item", "step", "value"}
    if not required.issubset(rows.columns):
        raise ForecastFormatError(f"forecast file missing columns {required - set(rows.columns)}")
    for key in ("context_length", "seasonal_period", "horizon"):
        if key not in meta:
            raise ForecastFormatError(f"forecast header missing '# {key}: ...'")
    return ForecastFile(
        context_length=int(meta["context_length"]),
        seasonal_period=int(meta["seasonal_period"]),
        horizon=int(meta["horizon"]),
        stride=int(meta["stride"]) if "stride" in meta else None,
        rows=rows,
    )


def seasonal_error(series: np.ndarray, window_start: int, L: int, m: int) -> float:
    """In-context scaled-error denominator: mean |y[t+m] - y[t]| over the context."""
    if m < 1:
        raise ValueError("seasonal period m must be >= 1")
    if window_start - L < 0:
        raise ValueError(f"window at {window_start} lacks a full {L}-step context")
    if L <= m:
        raise ValueError(f"context length {L} must exceed seasonal period {m}")
    context = series[window_start - L : window_start]
    return float(np.abs(context[m:] - context[:-m]).mean())


def mase(forecasts: ForecastFile, actuals: np.ndarray, item_ids: list[str],
         horizons: list[int] | None = None) -> dict:
    """Scaled error per horizon, averaged over windows and channels.

    ``actuals`` is the (T, C) demand matrix the forecasts target. Entries with
    a zero in-context error are excluded and counted.
    """
    L, m = forecasts.context_length, forecasts.seasonal_period
    horizons = horizons or [forecasts.horizon]
    if max(horizons) > forecasts.horizon:
        raise ForecastFormatError(f"requested horizon exceeds file horizon {forecasts.horizon}")
    item_idx = {label: i for i, label in enumerate(item_ids)}

    per_h_scores: dict[int, list[float]] = {h: [] for h in horizons}
    excluded = 0
    grouped = forecasts.rows.sort_values(["window_start", "item", "step"]).groupby(
        ["window_start", "item"], sort=True)
    for (t_w, item), group in grouped:
        if item not in item_idx:
            raise ForecastFormatError(f"forecast references unknown item {item!r}")
        i = item_idx[item]
        t_w = int(t_w)
        steps = group["step"].to_numpy()
        if not (steps == np.arange(len(steps))).all():
            raise ForecastFormatError(
                f"window {t_w} item {item}: steps must be 0..h-1 with no gaps")
        if t_w + forecasts.horizon > actuals.shape[0]:
            raise ForecastFormatError(f"window {t_w} extends past the actuals horizon")
        se = seasonal_error(actuals[:, i], t_w, L, m)
        if se == 0.0:
            excluded += 1
            continue
        preds = group["value"].to_numpy(dtype=np.float64)
        errors = np.abs(actuals[t_w : t_w + forecasts.horizon, i] - preds)
        for h in horizons:
            per_h_scores[h].append(errors[:h].mean() / se)

    scores = {h: (float(np.mean(vals)) if vals else float("nan"))
              for h, vals in per_h_scores.items()}
    return {"mase": scores, "entries": {h: len(v) for h, v in per_h_scores.items()},
            "excluded": excluded}


def geometric_mean(values) -> float:
    arr = np.asarray(list(values), dtype=np.float64)
    if (arr <= 0).any():
        raise ValueError("geometric mean requires positive values")
    return float(np.exp(np.log(arr).mean()))
