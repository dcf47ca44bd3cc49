"""Five-component demand-rate tensor and the Poisson demand sampler.

The per-item rate is ``base * max(floor, 1 + yearly + weekly + drift + bursts
+ sensitivity * shared_shock)``. Everything is drawn from named per-item
streams plus one shared shock stream, so regenerating with a larger catalogue
leaves the existing items' columns bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DemandKnobs, round_half_up
from .rng import stream

INTENSITY_FLOOR = 0.08   # lower bound on rate relative to the per-item base
DRIFT_CLIP = 0.6         # symmetric bound on the AR(1) drift contribution

# unit trapezoid: linear up over the first 15%, flat, linear down over the last 25%
RAMP_UP_END = 0.15
RAMP_DOWN_START = 0.75


@dataclass(frozen=True)
class TrapezoidalPulse:
    start: int
    duration: int
    height: float


def unit_pulse(u) -> np.ndarray:
    """Trapezoid shape on [0, 1]: ramp up to 1, plateau, ramp down to 0."""
    u = np.asarray(u, dtype=np.float64)
    up = u / RAMP_UP_END
    down = (1.0 - u) / (1.0 - RAMP_DOWN_START)
    out = np.minimum(np.minimum(up, 1.0), down)
    return np.where((u < 0.0) | (u > 1.0), 0.0, np.maximum(out, 0.0))


def eval_pulse(pulse: TrapezoidalPulse, t) -> np.ndarray:
    """Pulse value at time ``t``; zero outside [start, start + duration]."""
    u = (np.asarray(t, dtype=np.float64) - pulse.start) / pulse.duration
    return pulse.height * unit_pulse(u)


def _add_pulse(series: np.ndarray, pulse: TrapezoidalPulse) -> None:
    # truncate at the horizon; pulses may start anywhere in [0, T)
    T = series.shape[0]
    lo = max(pulse.start, 0)
    hi = min(pulse.start + pulse.duration, T - 1)
    if hi < lo:
        return
    ts = np.arange(lo, hi + 1)
    series[lo : hi + 1] += eval_pulse(pulse, ts)


def ar1_path(phi: float, sigma: float, a0: float, T: int, rng: np.random.Generator) -> np.ndarray:
    """Clipped AR(1) drift path: a[t] = clip(phi*a[t-1] + N(0, sigma^2), +-0.6).

    a[0] is stored as given (the clip applies from the first recursion on).
    """
    out = np.empty(T, dtype=np.float64)
    out[0] = a0
    eps = rng.normal(0.0, sigma, size=T - 1) if T > 1 else np.empty(0)
    prev = a0
    for t in range(1, T):
        val = phi * prev + eps[t - 1]
        if val > DRIFT_CLIP:
            val = DRIFT_CLIP
        elif val < -DRIFT_CLIP:
            val = -DRIFT_CLIP
        out[t] = val
        prev = val
    return out


@dataclass
class MacroShock:
    """Shared shock process: a sum of trapezoidal pulses, drawn once per run."""

    events: list[TrapezoidalPulse]
    path: np.ndarray  # G(t), length T

    @classmethod
    def draw(cls, T: int, knobs: DemandKnobs, seed: int) -> "MacroShock":
        gen = stream(seed, "shock")
        lo, hi = knobs.shock_count_range
        n_base = int(gen.integers(lo, hi + 1))
        n_events = max(0, round_half_up(n_base * knobs.shock_count_mult))
        events = []
        path = np.zeros(T, dtype=np.float64)
        for _ in range(n_events):
            t0 = int(gen.integers(0, T))
            dur = int(gen.integers(knobs.shock_duration_range[0], knobs.shock_duration_range[1] + 1))
            height = gen.uniform(*knobs.shock_height_range) * knobs.shock_height_mult
            pulse = TrapezoidalPulse(t0, dur, height)
            events.append(pulse)
            _add_pulse(path, pulse)
        return cls(events=events, path=path)


@dataclass
class ItemCoeffs:
    base_rate: float
    yearly_amp1: float
    yearly_amp2: float
    yearly_phase: float
    weekly_amp: float
    weekly_phase: float
    ar_coeff: float
    ar_sigma: float
    ar_init: float
    burst_rate: float
    sensitivity: float
    bursts: list[TrapezoidalPulse] = field(default_factory=list)
    drift: np.ndarray | None = None  # realized clipped AR(1) path


@dataclass
class IntensityTensor:
    """Deterministic demand-rate tensor plus everything drawn to build it."""

    rates: np.ndarray            # (T, C) float64
    coeffs: list[ItemCoeffs]
    shock: MacroShock
    seed: int

    @property
    def horizon(self) -> int:
        return self.rates.shape[0]

    @property
    def items(self) -> int:
        return self.rates.shape[1]

    @property
    def base_rates(self) -> np.ndarray:
        return np.array([c.base_rate for c in self.coeffs])

    def mean_intensity(self) -> float:
        """Realized mean rate over all items and steps (drives the back-solve)."""
        return float(self.rates.mean())


def _draw_item(i: int, T: int, knobs: DemandKnobs, seed: int) -> tuple[ItemCoeffs, np.ndarray]:
    gen = stream(seed, "demand", i)
    base = gen.uniform(*knobs.base_rate_range)
    a1 = gen.uniform(*knobs.yearly_amp1_range)
    a2 = gen.uniform(*knobs.yearly_amp2_range)
    phase_y = gen.uniform(0.0, 2.0 * np.pi)
    aw = gen.uniform(*knobs.weekly_amp_range)
    phase_w = gen.uniform(0.0, 2.0 * np.pi)
    if knobs.ar_coeff_override is not None:
        phi = float(knobs.ar_coeff_override)
    else:
        phi = gen.uniform(*knobs.ar_coeff_range)
    sigma = gen.uniform(*knobs.ar_sigma_range)
    a0 = gen.normal(0.0, knobs.ar_init_sd)
    rate = min(1.0, gen.uniform(*knobs.burst_rate_range) * knobs.burst_rate_mult)
    sens = gen.uniform(*knobs.sensitivity_range)

    ts = np.arange(T, dtype=np.float64)
    yearly = a1 * np.sin(2.0 * np.pi * ts / 365.0 + phase_y) \
        + a2 * np.sin(4.0 * np.pi * ts / 365.0 + 0.7 * phase_y)
    # weekly term uses t mod 7 inside the sine (phase-equivalent, pinned this way)
    weekly = aw * np.sin(2.0 * np.pi * (ts % 7) / 7.0 + phase_w)
    drift = ar1_path(phi, sigma, a0, T, gen)

    # burst starts: one trial per step (batch-drawn), then per-event shape draws
    trials = gen.random(T) < rate
    bursts: list[TrapezoidalPulse] = []
    burst_sum = np.zeros(T, dtype=np.float64)
    for t0 in np.nonzero(trials)[0]:
        dur = int(gen.integers(knobs.burst_duration_range[0], knobs.burst_duration_range[1] + 1))
        height = gen.uniform(*knobs.burst_height_range) * knobs.burst_height_mult
        pulse = TrapezoidalPulse(int(t0), dur, height)
        bursts.append(pulse)
        _add_pulse(burst_sum, pulse)

    coeffs = ItemCoeffs(
        base_rate=base, yearly_amp1=a1, yearly_amp2=a2, yearly_phase=phase_y,
        weekly_amp=aw, weekly_phase=phase_w, ar_coeff=phi, ar_sigma=sigma,
        ar_init=a0, burst_rate=rate, sensitivity=sens, bursts=bursts, drift=drift,
    )
    combined = 1.0 + yearly + weekly + drift + burst_sum
    return coeffs, combined


def build_intensity(C: int, T: int, knobs: DemandKnobs, seed: int) -> IntensityTensor:
    """Assemble the (T, C) rate tensor from the shared shock and per-item draws."""
    shock = MacroShock.draw(T, knobs, seed)
    rates = np.empty((T, C), dtype=np.float64)
    coeffs = []
    for i in range(C):
        item, combined = _draw_item(i, T, knobs, seed)
        rates[:, i] = item.base_rate * np.maximum(
            INTENSITY_FLOOR, combined + item.sensitivity * shock.path
        )
        coeffs.append(item)
    return IntensityTensor(rates=rates, coeffs=coeffs, shock=shock, seed=seed)


def demand_streams(seed: int, C: int) -> list[np.random.Generator]:
    """One Poisson sampling stream per item, independent of every other stream."""
    return [stream(seed, "poisson", i) for i in range(C)]


def sample_demand(
    tensor: IntensityTensor, t: int, streams: list[np.random.Generator]
) -> np.ndarray:
    """Draw the demand vector for step ``t``, one Poisson draw per item stream."""
    row = tensor.rates[t]
    return np.array([streams[i].poisson(row[i]) for i in range(tensor.items)], dtype=np.int64)


def sample_demand_matrix(tensor: IntensityTensor, seed: int) -> np.ndarray:
    """Full (T, C) demand sample using the same per-step draw order as a rollout."""
    streams = demand_streams(seed, tensor.items)
    out = np.empty((tensor.horizon, tensor.items), dtype=np.int64)
    for t in range(tensor.horizon):
        out[t] = sample_demand(tensor, t, streams)
    return out


def draw_unit_volumes(C: int, knobs: DemandKnobs, seed: int) -> np.ndarray:
    """Per-item physical volumes used by the packing routine."""
    lo, hi = knobs.unit_volume_range
    return np.array([stream(seed, "volume", i).uniform(lo, hi) for i in range(C)])
