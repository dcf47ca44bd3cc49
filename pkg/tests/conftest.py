from __future__ import annotations

import pytest

from echelon.config import load_config

# verdict lines registered by the acceptance criteria, echoed in the summary
ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def desk_config(items=5, horizon=300, seed=2025, m=7.0, **extra):
    overrides = {
        "structural.items": items,
        "structural.horizon": horizon,
        "structural.seed": seed,
        "structural.pipeline_multiplier": m,
    }
    overrides.update(extra)
    return load_config(None, overrides)


@pytest.fixture(scope="session")
def desk_release(tmp_path_factory):
    """One shared desk-scale release used by read-only tests."""
    from echelon.dataset import read_release, write_release

    out = tmp_path_factory.mktemp("rel") / "desk"
    cfg = desk_config(items=5, horizon=400)
    summary, manifest = write_release(cfg, out)
    return read_release(out)
