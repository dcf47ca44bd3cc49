"""Command-line entry point: simulate / validate / bullwhip / sweep / uq / score / serve.

Data goes to files, progress and the effective-config echo go to stderr.
Exit codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, load_config, merge_patch, parse_override, serialize_config

logger = logging.getLogger("echelon")

DESK_PROFILE = {"items": 5, "horizon": 2000}
OUT_ROOT_ENV = "ECHELON_OUT_ROOT"


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="run configuration file (YAML)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config field by dotted key, e.g. demand.burst_rate_mult=2")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--items", type=int, default=None, help="catalogue size override")
    p.add_argument("--horizon", type=int, default=None, help="horizon override (steps)")
    p.add_argument("--pipeline-mult", type=float, default=None,
                   help="pipeline multiplier override (0 = reactive shipping rule)")
    p.add_argument("--scenario", default=None,
                   help="apply a named scenario preset before other overrides")
    p.add_argument("--profile", choices=["desk"], default=None,
                   help="desk profile: items=5, horizon=2000 (fast runs)")


def _resolve_config(args):
    from .scenarios import load_preset

    overrides: dict = {}
    for text in args.overrides:
        key, value = parse_override(text)
        overrides[key] = value
    if args.profile == "desk":
        overrides.setdefault("structural.items", DESK_PROFILE["items"])
        overrides.setdefault("structural.horizon", DESK_PROFILE["horizon"])
    if args.items is not None:
        overrides["structural.items"] = args.items
    if args.horizon is not None:
        overrides["structural.horizon"] = args.horizon
    if args.seed is not None:
        overrides["structural.seed"] = args.seed
    if args.pipeline_mult is not None:
        overrides["structural.pipeline_multiplier"] = args.pipeline_mult

    if args.scenario:
        doc = {}
        if args.config is not None:
            doc = yaml.safe_load(Path(args.config).read_text()) or {}
        doc = merge_patch(doc, load_preset(args.scenario))
        from .config import config_from_dict
        return config_from_dict(doc, overrides)
    return load_config(args.config, overrides)


def _echo_config(cfg) -> None:
    print("effective configuration:", file=sys.stderr)
    echo = serialize_config(cfg)
    echo.pop("network", None)  # too long for a terminal echo; kept in the manifest
    print(yaml.safe_dump(echo, sort_keys=False), file=sys.stderr)


def _out_dir(args, default_name: str) -> Path:
    if args.out is not None:
        return Path(args.out)
    root = Path(os.environ.get(OUT_ROOT_ENV, "."))
    return root / default_name


def cmd_simulate(args) -> int:
    from .dataset import write_release

    cfg = _resolve_config(args)
    _echo_config(cfg)
    out = _out_dir(args, f"release_c{cfg.params.items}_seed{cfg.params.seed}")
    summary, manifest = write_release(cfg, out, progress_every=args.progress or 0)
    print(f"release written to {out}", file=sys.stderr)
    print(f"  demand={summary.total_demand} served={summary.total_served} "
          f"fill={summary.fill_rate:.4f} shipments={summary.shipment_rows} "
          f"wall={summary.wall_seconds:.1f}s", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    from .validate import check_conservation

    report = check_conservation(args.release)
    print(report.to_text())
    if args.report:
        Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    return 0 if report.passed else 1


def cmd_bullwhip(args) -> int:
    from .validate import bullwhip

    table = bullwhip(args.release, window=args.window, warmup=args.warmup)
    print(table.to_text())
    if args.csv:
        import pandas as pd

        rows = [{"node": r.node, "tier": r.tier, "daily": r.daily,
                 "windowed": r.windowed, "excluded_items": r.excluded_items}
                for r in table.per_node]
        pd.DataFrame(rows).to_csv(args.csv, index=False, lineterminator="\n")
    return 0


def cmd_sweep(args) -> int:
    from .scenarios import SWEEPS, run_sweep

    if args.name not in SWEEPS:
        print(f"unknown sweep {args.name!r}; have {sorted(SWEEPS)}", file=sys.stderr)
        return 2
    cfg = _resolve_config(args)
    _echo_config(cfg)
    out = _out_dir(args, "sweeps")
    results = run_sweep(args.name, cfg, out, baseline_release=args.baseline_release,
                        jobs=args.jobs)
    failures = 0
    for label, path in results.items():
        print(f"  {args.name}/{label}: {path}", file=sys.stderr)
        if str(path).startswith("error:"):
            failures += 1
    return 1 if failures else 0


def cmd_uq(args) -> int:
    from .scenarios import UQ_DEFAULT_K, UQ_INTERVALS, lhs_sample, run_uq_ensemble

    cfg = _resolve_config(args)
    _echo_config(cfg)
    design = lhs_sample(args.k or UQ_DEFAULT_K, UQ_INTERVALS, cfg.params.seed,
                        jitter=args.jitter)
    out = _out_dir(args, "uq")
    result = run_uq_ensemble(design, cfg, out, jobs=args.jobs)
    print(f"ensemble members: {len(result['members'])}, failures: {len(result['failures'])}",
          file=sys.stderr)
    print(f"envelope: {result['envelope']}", file=sys.stderr)
    return 1 if result["failures"] else 0


def cmd_score(args) -> int:
    from .dataset import read_release
    from .scenarios import mase, read_forecast_file

    release = read_release(args.release)
    forecasts = read_forecast_file(args.forecasts)
    horizons = [int(h) for h in args.horizons.split(",")] if args.horizons else None
    result = mase(forecasts, release.demand_matrix(), release.items, horizons)
    print(json.dumps(result, indent=2))
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    serve(host=args.host, port=args.port, static_dir=args.static,
          session_cap=args.session_cap)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="echelon",
        description="Deterministic multi-echelon logistics digital twin",
    )
    parser.add_argument("--version", action="version", version=f"echelon {__version__}")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    parser.add_argument("--log-json", action="store_true",
                        help="emit structured JSON log lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one rollout and write a release directory")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, default=None, help="release directory")
    p.add_argument("--progress", type=int, default=0, metavar="N",
                   help="log progress every N steps")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("validate", help="audit the three conservation laws on a release")
    p.add_argument("release", type=Path)
    p.add_argument("--report", type=Path, default=None, help="write a JSON report here")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("bullwhip", help="variance amplification per node and tier")
    p.add_argument("release", type=Path)
    p.add_argument("--window", type=int, default=30, help="aggregation bin size in steps")
    p.add_argument("--warmup", type=int, default=365, help="steps dropped before analysis")
    p.add_argument("--csv", type=Path, default=None, help="write per-node table as CSV")
    p.set_defaults(fn=cmd_bullwhip)

    p = sub.add_parser("sweep", help="run one knob sweep (non-baseline settings)")
    p.add_argument("name", help="drift | shock | burst | edge_cap | buffer | lead_time")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--baseline-release", type=Path, default=None,
                   help="existing baseline release to link instead of re-running")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("uq", help="Latin-hypercube forward-UQ ensemble plus envelope")
    _add_config_flags(p)
    p.add_argument("--k", type=int, default=None, help="ensemble size (default 20)")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="within-stratum jitter fraction in [0, 1)")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.set_defaults(fn=cmd_uq)

    p = sub.add_parser("score", help="score an external forecast file against a release")
    p.add_argument("--release", type=Path, required=True)
    p.add_argument("--forecasts", type=Path, required=True)
    p.add_argument("--horizons", default=None, help="comma-separated, e.g. 1,7,14,30")
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("serve", help="start the live session service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static", default=None, help="serve this directory as the dashboard")
    p.add_argument("--session-cap", type=int, default=32)
    p.set_defaults(fn=cmd_serve)

    return parser


def _setup_logging(level: str, as_json: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    if as_json:
        class _JsonFormatter(logging.Formatter):
            def format(self, record):
                return json.dumps({"level": record.levelname, "name": record.name,
                                   "message": record.getMessage()})
        handler.setFormatter(_JsonFormatter())
    else:
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    logging.basicConfig(level=getattr(logging, level), handlers=[handler])


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.log_level, args.log_json)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
