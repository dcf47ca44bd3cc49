import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echelon.config import config_from_dict, merge_patch
from echelon.dataset import read_release, write_release
from echelon.demand import build_intensity
from echelon.scenarios import (
    SWEEPS,
    UQ_INTERVALS,
    ForecastFormatError,
    geometric_mean,
    lhs_sample,
    load_preset,
    mase,
    preset_names,
    read_forecast_file,
    run_sweep,
    run_uq_ensemble,
    seasonal_error,
    write_envelope,
)

from conftest import desk_config


class TestSweepDefinitions:
    def test_six_sweeps_with_five_settings_each(self):
        assert set(SWEEPS) == {"drift", "shock", "burst", "edge_cap", "buffer", "lead_time"}
        for spec in SWEEPS.values():
            assert len(spec.settings) == 5
            assert sum(s.baseline for s in spec.settings) == 1

    def test_drift_settings(self):
        values = [s.overrides.get("demand.ar_coeff_override")
                  for s in SWEEPS["drift"].settings if not s.baseline]
        assert values == [0.71, 0.86, 0.96, 0.99]

    def test_shock_and_burst_multipliers(self):
        shock = [(s.overrides["demand.shock_count_mult"], s.overrides["demand.shock_height_mult"])
                 for s in SWEEPS["shock"].settings if not s.baseline]
        assert shock == [(0.0, 1.0), (0.5, 0.7), (2.0, 2.0), (3.0, 4.0)]
        burst = [(s.overrides["demand.burst_rate_mult"], s.overrides["demand.burst_height_mult"])
                 for s in SWEEPS["burst"].settings if not s.baseline]
        assert burst == [(1.5, 2.0), (2.0, 3.0), (3.0, 4.0), (5.0, 8.0)]

    def test_supply_side_settings(self):
        assert [s.overrides["transport.container_count_scale"]
                for s in SWEEPS["edge_cap"].settings if not s.baseline] == [0.3, 0.6, 1.5, 2.5]
        assert [s.overrides["inventory.ss_scale"]
                for s in SWEEPS["buffer"].settings if not s.baseline] == [0.1, 0.2, 0.5, 0.75]
        assert [s.overrides["inventory.lead_time_scale"]
                for s in SWEEPS["lead_time"].settings if not s.baseline] == [2.0, 5.0, 10.0, 20.0]


class TestRunSweep:
    def test_shock_sweep_writes_releases(self, tmp_path):
        base = desk_config(items=2, horizon=60)
        results = run_sweep("shock", base, tmp_path, baseline_release=None, jobs=1)
        assert results["baseline"] == "shared-with-main-release"
        done = [k for k, v in results.items() if not v.startswith(("error", "shared"))]
        assert sorted(done) == ["0.5x0.7", "0x1", "2x2", "3x4"]
        zero = read_release(tmp_path / "shock" / "0x1")
        # the zero-count setting must kill the shared shock entirely
        doc = zero.manifest["config"]
        assert doc["demand"]["shock_count_mult"] == 0.0
        tensor = build_intensity(2, 60, config_from_dict(doc).knobs.demand,
                                 doc["structural"]["seed"])
        assert (tensor.shock.path == 0).all()
        assert np.array_equal(tensor.rates, zero.rates)

    def test_edge_cap_scaling_applied(self, tmp_path):
        base = desk_config(items=2, horizon=60)
        run_sweep("edge_cap", base, tmp_path, jobs=1)
        rel = read_release(tmp_path / "edge_cap" / "2.5")
        containers = rel.manifest["materialized"]["edge_containers"]
        assert all(v == 8 for v in containers.values())  # round(3 * 2.5) half-up

    def test_baseline_symlink(self, tmp_path):
        base = desk_config(items=2, horizon=60)
        main = tmp_path / "main"
        write_release(base, main)
        results = run_sweep("buffer", base, tmp_path / "sweeps", baseline_release=main, jobs=1)
        link = Path(results["baseline"])
        assert link.exists()
        assert read_release(link).horizon == 60

    def test_sweep_rerun_byte_identical(self, tmp_path):
        import filecmp

        base = desk_config(items=2, horizon=60)
        run_sweep("drift", base, tmp_path / "one", jobs=1)
        run_sweep("drift", base, tmp_path / "two", jobs=1)
        member = Path("drift") / "phi_0.71"
        for f in sorted((tmp_path / "one" / member).iterdir()):
            assert filecmp.cmp(f, tmp_path / "two" / member / f.name, shallow=False), f.name

    def test_setting_failure_isolated(self, tmp_path, monkeypatch):
        base = desk_config(items=2, horizon=60)
        import echelon.scenarios as sc

        real = sc._run_member
        calls = []

        def flaky(doc, overrides, out_dir):
            calls.append(out_dir)
            if out_dir.endswith("0x1"):
                raise RuntimeError("boom")
            return real(doc, overrides, out_dir)

        monkeypatch.setattr(sc, "_run_member", flaky)
        results = sc.run_sweep("shock", base, tmp_path, jobs=1)
        assert results["0x1"].startswith("error:")
        assert not results["2x2"].startswith("error:")


class TestLhs:
    def test_one_sample_per_stratum(self):
        design = lhs_sample(20, UQ_INTERVALS, seed=2025)
        assert design.unit.shape == (20, 3)
        for d in range(3):
            strata = np.floor(design.unit[:, d] * 20).astype(int)
            assert sorted(strata) == list(range(20))

    def test_k1_is_midpoint(self):
        design = lhs_sample(1, UQ_INTERVALS, seed=1)
        for d, (lo, hi) in enumerate(design.intervals):
            assert design.samples[0, d] == pytest.approx((lo + hi) / 2)

    def test_interval_containment(self):
        design = lhs_sample(20, UQ_INTERVALS, seed=3)
        phi = design.samples[:, design.names.index("ar_coeff")]
        assert phi.min() >= 0.99916 and phi.max() <= 0.99944

    def test_deterministic_in_seed(self):
        a = lhs_sample(10, UQ_INTERVALS, seed=5)
        b = lhs_sample(10, UQ_INTERVALS, seed=5)
        c = lhs_sample(10, UQ_INTERVALS, seed=6)
        assert np.array_equal(a.samples, b.samples)
        assert not np.array_equal(a.samples, c.samples)

    def test_jitter_stays_in_stratum(self):
        design = lhs_sample(8, UQ_INTERVALS, seed=7, jitter=0.999)
        for d in range(3):
            strata = np.floor(design.unit[:, d] * 8).astype(int)
            assert sorted(strata) == list(range(8))

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            lhs_sample(0, UQ_INTERVALS, seed=1)


class TestUqEnsemble:
    def test_desk_ensemble_envelope(self, tmp_path):
        base = desk_config(items=2, horizon=80)
        design = lhs_sample(3, UQ_INTERVALS, seed=2025)
        result = run_uq_ensemble(design, base, tmp_path, jobs=1)
        assert len(result["members"]) == 3 and not result["failures"]
        env = pd.read_csv(result["envelope"])
        assert len(env) == 2 * 80
        assert (env["min"] <= env["median"]).all()
        assert (env["median"] <= env["max"]).all()
        design_echo = json.loads((tmp_path / "design.json").read_text())
        assert design_echo["K"] == 3

    def test_identical_members_zero_width(self, tmp_path):
        base = desk_config(items=2, horizon=60)
        out = tmp_path / "rel"
        write_release(base, out)
        rel = read_release(out)
        env_path = tmp_path / "env.csv"
        write_envelope([rel, rel], env_path)
        env = pd.read_csv(env_path)
        assert (env["min"] == env["max"]).all()
        assert (env["median"] == env["min"]).all()

    def test_member_knob_binding(self, tmp_path):
        base = desk_config(items=2, horizon=60)
        design = lhs_sample(2, UQ_INTERVALS, seed=9)
        result = run_uq_ensemble(design, base, tmp_path, jobs=1)
        member0 = read_release(result["members"][0])
        doc = member0.manifest["config"]
        row = dict(zip(design.names, design.samples[0]))
        assert doc["demand"]["ar_coeff_override"] == pytest.approx(row["ar_coeff"])
        assert doc["demand"]["shock_height_mult"] == pytest.approx(row["shock_height_scale"])
        assert doc["demand"]["burst_height_mult"] == pytest.approx(row["burst_height_scale"])


class TestPresets:
    def test_five_shipped_presets(self):
        assert preset_names() == ["burst_xhi", "chaos_burst", "chaos_compound",
                                  "drift_mid", "shock_xhi"]

    def test_presets_merge_into_valid_configs(self):
        for name in preset_names():
            patch = load_preset(name)
            cfg = config_from_dict(merge_patch({"structural": {"items": 2, "horizon": 40}}, patch))
            assert cfg.params.items == 2

    def test_drift_mid_range(self):
        cfg = config_from_dict(merge_patch({}, load_preset("drift_mid")))
        assert cfg.knobs.demand.ar_coeff_range == (0.95, 0.97)

    def test_chaos_compound_combines(self):
        cfg = config_from_dict(merge_patch({}, load_preset("chaos_compound")))
        assert cfg.knobs.demand.shock_count_mult == 3.0
        assert cfg.knobs.demand.shock_height_mult == 4.0
        assert cfg.knobs.demand.ar_coeff_range == (0.96, 0.98)

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            load_preset("nope")


def forecast_frame(rows):
    return pd.DataFrame(rows, columns=["window_start", "item", "step", "value"])


def make_forecast_file(path, rows, L, m, h, stride=None):
    lines = [f"# context_length: {L}", f"# seasonal_period: {m}", f"# horizon: {h}"]
    if stride is not None:
        lines.append(f"# stride: {stride}")
    frame = forecast_frame(rows)
    path.write_text("\n".join(lines) + "\n" + frame.to_csv(index=False))
    return path


class TestMase:
    def test_hand_oracle_scores_exactly_1_5(self, tmp_path):
        # context [1,2,3,4], m=1 -> in-context error 1; actuals [5,7] vs [4,5]
        actuals = np.array([[1], [2], [3], [4], [5], [7]], dtype=float)
        f = make_forecast_file(tmp_path / "f.csv",
                               [(4, "I1", 0, 4.0), (4, "I1", 1, 5.0)], L=4, m=1, h=2)
        result = mase(read_forecast_file(f), actuals, ["I1"], horizons=[2])
        assert result["mase"][2] == 1.5
        assert result["excluded"] == 0

    def test_perfect_forecast_scores_zero(self, tmp_path):
        actuals = np.array([[1], [2], [3], [4], [5], [7]], dtype=float)
        f = make_forecast_file(tmp_path / "f.csv",
                               [(4, "I1", 0, 5.0), (4, "I1", 1, 7.0)], L=4, m=1, h=2)
        result = mase(read_forecast_file(f), actuals, ["I1"], horizons=[2])
        assert result["mase"][2] == 0.0

    def test_seasonal_error_values(self):
        y = np.array([1.0, 2, 3, 4])
        assert seasonal_error(y, 4, 4, 1) == 1.0
        y2 = np.array([1.0, 5, 1, 5, 1, 5])
        assert seasonal_error(y2, 6, 6, 2) == 0.0  # period-2 naive is exact

    def test_seasonal_naive_numerator_identity(self, tmp_path):
        rng = np.random.default_rng(4)
        T, L, m, h = 300, 60, 7, 14
        y = rng.poisson(40, size=T).astype(float)
        t_w = 200
        rows = [(t_w, "I1", k, y[t_w + k - m]) for k in range(h)]
        f = make_forecast_file(tmp_path / "f.csv", rows, L=L, m=m, h=h)
        result = mase(read_forecast_file(f), y[:, None], ["I1"], horizons=[h])
        # independent spreadsheet-style recomputation
        numer = np.mean([abs(y[t_w + k] - y[t_w + k - m]) for k in range(h)])
        denom = np.mean([abs(y[t + m] - y[t]) for t in range(t_w - L, t_w - m)])
        assert result["mase"][h] == pytest.approx(numer / denom)

    def test_zero_seasonal_error_excluded_and_counted(self, tmp_path):
        actuals = np.array([[2], [2], [2], [2], [5], [7]], dtype=float)
        f = make_forecast_file(tmp_path / "f.csv",
                               [(4, "I1", 0, 5.0), (4, "I1", 1, 7.0)], L=4, m=1, h=2)
        result = mase(read_forecast_file(f), actuals, ["I1"], horizons=[2])
        assert result["excluded"] == 1
        assert np.isnan(result["mase"][2])

    def test_averages_over_windows_and_channels(self, tmp_path):
        actuals = np.array([[1, 1], [2, 2], [3, 3], [4, 4], [5, 5], [7, 7]], dtype=float)
        rows = [(4, "I1", 0, 4.0), (4, "I1", 1, 5.0),
                (4, "I2", 0, 5.0), (4, "I2", 1, 7.0)]
        f = make_forecast_file(tmp_path / "f.csv", rows, L=4, m=1, h=2)
        result = mase(read_forecast_file(f), actuals, ["I1", "I2"], horizons=[2])
        assert result["mase"][2] == pytest.approx((1.5 + 0.0) / 2)
        assert result["entries"][2] == 2

    @settings(max_examples=25, deadline=None)
    @given(c=st.floats(min_value=0.1, max_value=50.0),
           seed=st.integers(min_value=0, max_value=10_000))
    def test_scale_equivariance(self, tmp_path_factory, c, seed):
        tmp = tmp_path_factory.mktemp("mase")
        rng = np.random.default_rng(seed)
        y = rng.poisson(30, size=40).astype(float) + 1.0
        rows = [(20, "I1", k, float(rng.poisson(30) + 1)) for k in range(5)]
        f1 = make_forecast_file(tmp / "f1.csv", rows, L=10, m=1, h=5)
        base = mase(read_forecast_file(f1), y[:, None], ["I1"], horizons=[5])
        rows_scaled = [(w, i, k, v * c) for w, i, k, v in rows]
        f2 = make_forecast_file(tmp / "f2.csv", rows_scaled, L=10, m=1, h=5)
        scaled = mase(read_forecast_file(f2), (y * c)[:, None], ["I1"], horizons=[5])
        assert scaled["mase"][5] == pytest.approx(base["mase"][5], rel=1e-9)

    def test_missing_header_key(self, tmp_path):
        p = tmp_path / "f.csv"
        p.write_text("# context_length: 4\nwindow_start,item,step,value\n4,I1,0,1.0\n")
        with pytest.raises(ForecastFormatError, match="seasonal_period"):
            read_forecast_file(p)

    def test_step_gaps_rejected(self, tmp_path):
        actuals = np.ones((10, 1))
        f = make_forecast_file(tmp_path / "f.csv", [(5, "I1", 0, 1.0), (5, "I1", 2, 1.0)],
                               L=4, m=1, h=2)
        with pytest.raises(ForecastFormatError, match="no gaps"):
            mase(read_forecast_file(f), actuals, ["I1"], horizons=[2])


def test_geometric_mean():
    assert geometric_mean([4.0, 1.0]) == pytest.approx(2.0)
    assert geometric_mean([2.0, 2.0, 2.0]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        geometric_mean([1.0, 0.0])
