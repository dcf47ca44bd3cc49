from pathlib import Path

import pytest
import yaml

from echelon.config import (
    ConfigError,
    config_from_dict,
    dump_config,
    load_config,
    materialize_policies,
    merge_patch,
    parse_override,
    serialize_config,
)

BASELINE_FILE = Path(__file__).parent.parent / "src" / "echelon" / "data" / "baseline.yaml"


def zero_var_policies():
    doc = yaml.safe_load(BASELINE_FILE.read_text())
    pol = doc["inventory"]["policies"]
    for node in pol.values():
        for key in ("init", "s", "S", "lead_mean"):
            node[key] = [node[key][0], 0]
    return {"inventory": {"policies": pol}}


class TestLoading:
    def test_empty_file_is_all_defaults(self, tmp_path):
        empty = tmp_path / "empty.yaml"
        empty.write_text("")
        cfg = load_config(empty)
        default = load_config(None)
        assert serialize_config(cfg) == serialize_config(default)

    def test_bundled_baseline_reproduces_defaults(self):
        cfg = load_config(BASELINE_FILE)
        assert serialize_config(cfg) == serialize_config(load_config(None))

    def test_released_runtime_params(self, tmp_path):
        f = tmp_path / "run.yaml"
        f.write_text("structural: {pipeline_multiplier: 7.0, seed: 2025, horizon: 52560}\n")
        cfg = load_config(f)
        assert cfg.params.pipeline_multiplier == 7.0
        assert cfg.params.seed == 2025
        assert cfg.params.horizon == 52560
        assert cfg.params.items == 50

    def test_table_defaults(self):
        cfg = load_config(None)
        d = cfg.knobs.demand
        assert d.base_rate_range == (80.0, 250.0)
        assert d.yearly_amp1_range == (0.12, 0.28)
        assert d.ar_coeff_range == (0.9990, 0.9996)
        assert d.shock_count_range == (5, 11)
        assert d.burst_duration_range == (30, 179)
        assert cfg.knobs.transport.load_factor == 1.20
        assert cfg.knobs.transport.packing_efficiency == 0.93
        # released edge volumes at both cardinalities
        for C, sf_vol, hub_vol, lm3 in ((50, 5000.0, 15000.0, 3000.0), (200, 20000.0, 60000.0, 12000.0)):
            net = load_config(None, {"structural.items": C}).network
            assert net.edge("SanFrancisco", "Nashville").volume == sf_vol
            assert net.edge("Nashville", "Atlanta").volume == hub_vol
            assert net.edge("Memphis", "Baltimore").volume == lm3
            assert all(e.containers == 3 for e in net.edges)

    def test_container_scale_rounding(self):
        cfg = load_config(None, {"transport.container_count_scale": 0.3})
        assert all(e.containers == 1 for e in cfg.network.edges)  # round(0.9) floored at 1
        cfg = load_config(None, {"transport.container_count_scale": 2.5})
        assert all(e.containers == 8 for e in cfg.network.edges)  # half-up round(7.5)
        cfg = load_config(None, {"transport.container_count_scale": 1.5})
        assert all(e.containers == 5 for e in cfg.network.edges)  # half-up round(4.5)

    def test_unknown_section_and_field(self):
        with pytest.raises(ConfigError, match="unknown config sections"):
            config_from_dict({"nonsense": {}})
        with pytest.raises(ConfigError, match="unknown field demand.bogus"):
            config_from_dict({"demand": {"bogus": 1}})

    def test_range_violation(self):
        with pytest.raises(ConfigError, match="lower bound"):
            config_from_dict({"demand": {"base_rate_range": [10, 5]}})

    def test_edge_to_unknown_node(self):
        doc = yaml.safe_load(BASELINE_FILE.read_text())
        doc["network"]["edges"].append({"from": "Nashville", "to": "Nowhere", "transit": 1,
                                        "containers": 3, "volume": 10})
        with pytest.raises(ConfigError, match="unknown node"):
            config_from_dict(doc)

    def test_negative_capacity(self):
        doc = yaml.safe_load(BASELINE_FILE.read_text())
        doc["network"]["edges"][0]["volume"] = -4.0
        with pytest.raises(ConfigError, match="volume must be positive"):
            config_from_dict(doc)

    def test_overrides_win_over_file(self, tmp_path):
        f = tmp_path / "run.yaml"
        f.write_text("structural: {seed: 1}\n")
        cfg = load_config(f, {"structural.seed": 99})
        assert cfg.params.seed == 99

    def test_parse_override_typing(self):
        assert parse_override("structural.seed=7") == ("structural.seed", 7)
        assert parse_override("demand.burst_rate_mult=2.5") == ("demand.burst_rate_mult", 2.5)
        assert parse_override("structural.step_label=hour") == ("structural.step_label", "hour")
        with pytest.raises(ConfigError):
            parse_override("no-equals-sign")

    def test_missing_policy_for_custom_node(self):
        doc = {
            "network": {
                "nodes": [{"id": "x", "role": "source"}, {"id": "d", "role": "destination"}],
                "edges": [{"from": "x", "to": "d", "transit": 1, "containers": 1, "volume": 10}],
            }
        }
        with pytest.raises(ConfigError, match="no inventory policy for node x"):
            config_from_dict(doc)


class TestRoundTrip:
    def test_serialize_load_identical_materialization(self, tmp_path):
        cfg = load_config(None, {"structural.items": 4, "inventory.ss_scale": 0.8})
        out = tmp_path / "echo.yaml"
        dump_config(cfg, out)
        cfg2 = load_config(out)
        assert serialize_config(cfg) == serialize_config(cfg2)
        p1 = materialize_policies(cfg)
        p2 = materialize_policies(cfg2)
        assert (p1.init == p2.init).all()
        assert (p1.s == p2.s).all()
        assert (p1.S == p2.S).all()
        assert (p1.mu == p2.mu).all()


class TestPolicies:
    def test_zero_var_reproduces_table(self):
        cfg = config_from_dict(zero_var_policies(), {"structural.items": 3})
        table = materialize_policies(cfg)
        nash = table.row("Nashville")
        assert (table.init[nash] == 8000).all()
        assert (table.s[nash] == 1000).all()
        assert (table.S[nash] == 8000).all()
        assert (table.mu[nash] == 3).all()
        chi = table.row("Chicago")
        assert (table.s[chi] == 1000).all() and (table.mu[chi] == 8).all()
        dest = table.row("NewYork")
        assert (table.init[dest] == 0).all()

    def test_ss_scale_halves_atlanta(self):
        doc = merge_patch(zero_var_policies(), {"inventory": {"ss_scale": 0.5}})
        cfg = config_from_dict(doc, {"structural.items": 2})
        table = materialize_policies(cfg)
        atl = table.row("Atlanta")
        assert (table.s[atl] == 250).all()
        assert (table.S[atl] == 3000).all()
        assert (table.init[atl] == 3000).all()

    def test_lead_time_scale(self):
        doc = merge_patch(zero_var_policies(), {"inventory": {"lead_time_scale": 2.0}})
        cfg = config_from_dict(doc, {"structural.items": 2})
        table = materialize_policies(cfg)
        assert (table.mu[table.row("Nashville")] == 6).all()

    def test_degenerate_s_equals_S_clips(self):
        doc = zero_var_policies()
        doc["inventory"]["policies"]["Atlanta"]["s"] = [6000, 0]  # s base == S base
        cfg = config_from_dict(doc, {"structural.items": 2})
        table = materialize_policies(cfg)
        atl = table.row("Atlanta")
        assert (table.s[atl] == 5999).all()
        assert (table.S[atl] == 6000).all()

    def test_init_clipped_into_s_S(self):
        doc = zero_var_policies()
        doc["inventory"]["policies"]["Atlanta"]["init"] = [100, 0]  # below s
        cfg = config_from_dict(doc, {"structural.items": 2})
        table = materialize_policies(cfg)
        atl = table.row("Atlanta")
        assert (table.init[atl] == table.s[atl]).all()

    def test_invariants_hold_under_draws(self):
        cfg = load_config(None, {"structural.items": 30, "structural.seed": 11})
        table = materialize_policies(cfg)
        for node in cfg.network.node_ids:
            if node == "NewYork":
                continue
            r = table.row(node)
            assert (table.s[r] >= 0).all()
            assert (table.s[r] < table.S[r]).all()
            assert (table.init[r] >= table.s[r]).all()
            assert (table.init[r] <= table.S[r]).all()
            assert (table.mu[r] >= 1).all()

    def test_item_prefix_coincidence(self):
        big = materialize_policies(load_config(None, {"structural.items": 8}))
        small = materialize_policies(load_config(None, {"structural.items": 5}))
        assert (big.init[:, :5] == small.init).all()
        assert (big.s[:, :5] == small.s).all()
        assert (big.mu[:, :5] == small.mu).all()

    def test_var_ge_base_warns(self, caplog):
        doc = zero_var_policies()
        doc["inventory"]["policies"]["Atlanta"]["s"] = [50, 80]
        cfg = config_from_dict(doc, {"structural.items": 1})
        with caplog.at_level("WARNING"):
            materialize_policies(cfg)
        assert any("clipping at 0" in r.message for r in caplog.records)
