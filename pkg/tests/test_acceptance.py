"""Acceptance suite: one test per release criterion, strict tolerances.

Each criterion prints a single PASS/FAIL line on the real stdout (bypassing
capture) so the gate is readable straight off a CI log. Run order is
cheap-to-expensive; the final full-scale rollout is the only slow entry.
"""

import filecmp
import functools
import itertools
import math
import shutil
import sys
import time

import numpy as np
import pandas as pd
import pytest

from echelon.config import load_config
from echelon.dataset import read_release, write_release
from echelon.demand import build_intensity
from echelon.engine import Simulation, greedy_pack
from echelon.rng import stream
from echelon.scenarios import (
    UQ_INTERVALS,
    lhs_sample,
    mase,
    read_forecast_file,
    run_uq_ensemble,
    seasonal_error,
)
from echelon.validate import EMPIRICAL_BULLWHIP_RANGE, bullwhip, check_conservation

from conftest import desk_config


def criterion(name):
    """Record and print one PASS/FAIL line per criterion.

    Lines go to the live stdout (visible under -s) and to the terminal
    summary (visible under default capture).
    """

    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            from conftest import ACCEPTANCE_RESULTS

            started = time.perf_counter()
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                line = f"ACCEPTANCE {name}: FAIL"
                ACCEPTANCE_RESULTS.append(line)
                print(line, file=sys.__stdout__, flush=True)
                raise
            line = f"ACCEPTANCE {name}: PASS ({time.perf_counter() - started:.1f}s)"
            ACCEPTANCE_RESULTS.append(line)
            print(line, file=sys.__stdout__, flush=True)
            return result

        return wrapper

    return deco


@criterion("conservation-exactness")
def test_conservation_exactness(tmp_path):
    # C=10, T=5000, fixed seed: all three laws exact at every transition
    cfg = desk_config(items=10, horizon=5000, seed=2025, m=7.0)
    out = tmp_path / "rel"
    write_release(cfg, out)
    report = check_conservation(read_release(out))
    for law in report.laws.values():
        assert law.violations == 0, f"{law.name}: {law.violations} violations"
        assert law.max_abs_residual == 0
    assert report.passed


@criterion("determinism-and-item-prefix")
def test_determinism_and_prefix(tmp_path):
    cfg8 = desk_config(items=8, horizon=1500, seed=2025, m=7.0)
    a, b = tmp_path / "a", tmp_path / "b"
    write_release(cfg8, a)
    write_release(cfg8, b)
    files_a = sorted(p.name for p in a.iterdir())
    files_b = sorted(p.name for p in b.iterdir())
    assert files_a == files_b
    for name in files_a:
        assert filecmp.cmp(a / name, b / name, shallow=False), f"{name} differs between runs"

    knobs = cfg8.knobs.demand
    t8 = build_intensity(8, 1500, knobs, seed=2025)
    t5 = build_intensity(5, 1500, knobs, seed=2025)
    assert np.array_equal(t8.rates[:, :5], t5.rates), "item-prefix columns differ"


def _first_fit_reference(volume, max_units, path, containers):
    res = {k: list(v) for k, v in containers.items()}
    placed = 0
    for _ in range(max_units):
        slots = []
        ok = True
        for key in path:
            j = next((idx for idx, r in enumerate(res[key]) if r >= volume), None)
            if j is None:
                ok = False
                break
            slots.append((key, j))
        if not ok:
            break
        for key, j in slots:
            res[key][j] -= volume
        placed += 1
    return placed, res


@criterion("greedy-pack-oracle")
def test_greedy_pack_exhaustive_oracle():
    # every instance with <= 3 edges, <= 3 containers per edge,
    # per-edge container volume in {3..6}, item volume in {1..5}, Q <= 6
    checked = 0
    edge_configs = list(itertools.product([1, 2, 3], [3, 4, 5, 6]))
    for n_edges in (1, 2, 3):
        path = [f"e{j}" for j in range(n_edges)]
        for combo in itertools.product(edge_configs, repeat=n_edges):
            base = {k: [float(V)] * n for k, (n, V) in zip(path, combo)}
            for v in (1, 2, 3, 4, 5):
                for Q in range(0, 7):
                    mine = {k: list(r) for k, r in base.items()}
                    got = greedy_pack(float(v), Q, path, mine)
                    want, want_res = _first_fit_reference(float(v), Q, path, base)
                    assert got == want, (combo, v, Q)
                    assert mine == want_res, (combo, v, Q)
                    checked += 1
    assert checked == (12 + 12**2 + 12**3) * 5 * 7


@criterion("schema-fidelity")
def test_schema_fidelity(tmp_path):
    cfg = desk_config(items=5, horizon=200, m=7.0)
    out = tmp_path / "rel"
    write_release(cfg, out)

    daily = (out / "daily_records.csv").read_text().splitlines()
    assert daily[0] == ("day,item,demand,served_from_stock,new_backlog_today,"
                        "dest_on_hand_end_before_ship,dest_backlog_end_before_ship")
    assert len(daily) - 1 == 1000

    for name, value_col in (("inventory_history.csv", "on_hand"),
                            ("backlog_history.csv", "backlog")):
        lines = (out / name).read_text().splitlines()
        assert lines[0] == f"day,node,item,{value_col}"
        assert len(lines) - 1 == 13_000

    intransit = (out / "intransit_history.csv").read_text().splitlines()
    assert intransit[0] == "day,node,item,in_transit"
    assert len(intransit) - 1 == 1000

    summary = (out / "service_summary.csv").read_text().splitlines()
    assert summary[0] == "item,total_demand,served_from_stock,new_backlog_added,fill_rate_stock_only"
    assert len(summary) - 1 == 5

    ships = (out / "shipments.csv").read_text().splitlines()
    assert ships[0] == "day,arrival_day,from,to,item,units,path_nodes,edge_times"

    frame = pd.read_csv(out / "daily_records.csv")
    identity = (frame["served_from_stock"] + frame["new_backlog_today"] == frame["demand"])
    assert identity.all(), "served + new_backlog != demand on some row"
    assert len(frame) == 1000
    assert frame["item"].iloc[0] == "I1" and frame["item"].iloc[4] == "I5"


@criterion("intensity-invariants")
def test_intensity_invariants():
    knobs = load_config(None).knobs.demand
    tensor = build_intensity(50, 10_000, knobs, seed=2025)
    lam_bar = tensor.base_rates

    floor = 0.08 * lam_bar[None, :]
    assert (tensor.rates >= floor).all(), "rate fell below the floor"
    floored = tensor.rates == floor
    assert floored.any(), "floor never engaged on this tensor"

    for c in tensor.coeffs:
        assert np.abs(c.drift[1:]).max() <= 0.6, "drift clip violated"

    from echelon.config import config_from_dict
    zero_cfg = config_from_dict({"demand": {"shock_count_mult": 0.0}})
    tensor0 = build_intensity(50, 10_000, zero_cfg.knobs.demand, seed=2025)
    assert (tensor0.shock.path == 0).all(), "shock sweep (0,1) must kill the shared shock"


@criterion("lead-time-pmf")
def test_lead_time_pmf_million_draws():
    mu, sigma, n = 3.0, 0.6, 1_000_000
    gen = stream(2025, "acceptance-leadtime")
    draws = np.maximum(1, np.ceil(gen.normal(mu, sigma, size=n))).astype(np.int64)

    def phi(x):
        return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))

    counts = np.bincount(draws, minlength=21)
    for ell in range(1, 21):
        if ell == 1:
            p = phi((1 - mu) / sigma)
        else:
            p = phi((ell - mu) / sigma) - phi((ell - 1 - mu) / sigma)
        se = math.sqrt(max(p * (1 - p), 0.0) / n)
        observed = counts[ell] / n
        assert abs(observed - p) <= 4 * se + 1e-12, (
            f"cell {ell}: observed {observed:.6g}, expected {p:.6g}, 4se {4 * se:.3g}")


@criterion("bullwhip-direction")
def test_bullwhip_direction(tmp_path):
    cfg = desk_config(items=10, horizon=8000, seed=2025, m=7.0)
    out = tmp_path / "rel"
    write_release(cfg, out)
    table = bullwhip(read_release(out), window=30, warmup=365)

    lm_daily, lm_monthly = table.per_tier["Tier-5 (LM)"]
    hub_daily, _ = table.per_tier["Hub"]
    _, dest_monthly = table.per_tier["Destination"]

    assert lm_monthly is not None and lm_monthly > 1.0, f"last-mile monthly {lm_monthly}"
    assert dest_monthly is not None and dest_monthly > 1.0, f"destination monthly {dest_monthly}"
    assert hub_daily < lm_daily, f"hub daily {hub_daily} !< last-mile daily {lm_daily}"

    lo, hi = EMPIRICAL_BULLWHIP_RANGE
    for tier, ok in table.in_empirical_range().items():
        if not ok:
            monthly = table.per_tier[tier][1]
            print(f"  note: tier {tier} monthly ratio {monthly} outside [{lo}, {hi}] "
                  "(flagged, not failed)", file=sys.__stdout__, flush=True)


@criterion("mase-oracle")
def test_mase_oracle(tmp_path):
    # hand-computable instance: context [1,2,3,4], m=1, actuals [5,7], forecast [4,5]
    actuals = np.array([[1], [2], [3], [4], [5], [7]], dtype=float)
    f = tmp_path / "hand.csv"
    f.write_text("# context_length: 4\n# seasonal_period: 1\n# horizon: 2\n"
                 "window_start,item,step,value\n4,I1,0,4.0\n4,I1,1,5.0\n")
    result = mase(read_forecast_file(f), actuals, ["I1"], horizons=[2])
    assert result["mase"][2] == 1.5, f"hand instance scored {result['mase'][2]}"

    # seasonal-naive forecast: numerator must equal mean |y_t - y_{t-m}|,
    # cross-checked with an independent plain-loop recomputation
    rng = np.random.default_rng(77)
    y = rng.poisson(60, size=400).astype(float)
    L, m, h, t_w = 80, 7, 20, 300
    rows = "\n".join(f"{t_w},I1,{k},{y[t_w + k - m]}" for k in range(h))
    f2 = tmp_path / "naive.csv"
    f2.write_text(f"# context_length: {L}\n# seasonal_period: {m}\n# horizon: {h}\n"
                  "window_start,item,step,value\n" + rows + "\n")
    scored = mase(read_forecast_file(f2), y[:, None], ["I1"], horizons=[h])["mase"][h]

    numer = sum(abs(y[t_w + k] - y[t_w + k - m]) for k in range(h)) / h
    denom = sum(abs(y[t + m] - y[t]) for t in range(t_w - L, t_w - m)) / (L - m)
    assert scored == pytest.approx(numer / denom, rel=1e-12)
    assert seasonal_error(y, t_w, L, m) == pytest.approx(denom, rel=1e-12)


@criterion("uq-ensemble")
def test_uq_ensemble_properties(tmp_path):
    design = lhs_sample(20, UQ_INTERVALS, seed=2025)
    for d in range(design.unit.shape[1]):
        strata = np.floor(design.unit[:, d] * 20).astype(int)
        assert sorted(strata) == list(range(20)), "a stratum is unoccupied or doubled"

    base = desk_config(items=5, horizon=2000, m=7.0)
    small = lhs_sample(5, UQ_INTERVALS, seed=2025)
    result = run_uq_ensemble(small, base, tmp_path / "uq", jobs=2)
    assert not result["failures"]
    env = pd.read_csv(result["envelope"])
    assert len(env) == 5 * 2000
    assert int((env["min"] > env["median"]).sum()) == 0
    assert int((env["median"] > env["max"]).sum()) == 0


@criterion("service-transparency")
def test_service_transparency():
    from fastapi.testclient import TestClient

    from echelon.service import SessionService, create_app

    overrides = {"structural.seed": 2025, "structural.horizon": 600,
                 "structural.items": 5, "structural.pipeline_multiplier": 7.0}
    app = create_app(SessionService())
    with TestClient(app) as client:
        resp = client.post("/sessions", json={"overrides": overrides})
        sid = resp.json()["id"]
        client.post(f"/sessions/{sid}/advance", json={"steps": 500})
        service_digest = client.get(f"/sessions/{sid}").json()["state_digest"]

    cfg = desk_config(items=5, horizon=600, seed=2025, m=7.0)
    sim = Simulation.from_config(cfg)
    for _ in range(500):
        sim.step()
    assert sim.state.digest() == service_digest


@criterion("paper-scale-feasibility")
def test_paper_scale_rollout(tmp_path):
    # full-catalogue rollout: informational bound 20 minutes, hard bound 60
    cfg = load_config(None, {"structural.pipeline_multiplier": 7.0})
    assert cfg.params.items == 50 and cfg.params.horizon == 52560
    out = tmp_path / "full"
    started = time.perf_counter()
    summary, manifest = write_release(cfg, out, progress_every=10_000)
    elapsed = time.perf_counter() - started
    print(f"  full C=50 T=52560 rollout: {elapsed / 60:.1f} min "
          f"(fill {summary.fill_rate:.4f}, {summary.shipment_rows} shipment rows)",
          file=sys.__stdout__, flush=True)
    try:
        assert summary.shipment_rows > 1_000_000  # order of magnitude per the release notes
        assert manifest["row_counts"]["daily_records.csv"] == 52560 * 50
        assert elapsed < 3600, f"full-scale rollout took {elapsed / 60:.1f} min (> 60 min)"
        if elapsed > 1200:
            print("  note: exceeded the 20-minute informational bound",
                  file=sys.__stdout__, flush=True)
    finally:
        shutil.rmtree(out, ignore_errors=True)
