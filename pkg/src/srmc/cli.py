"""Command-line entry point: ``srmc run|verify|sweep|report``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import ConfigError, apply_override, load_config, resolve_experiment
from .history import HistoryFault

SEED_ENV = "SRMC_SEED"


def _parser():
    p = argparse.ArgumentParser(prog="srmc", description="Score-repellent MCMC experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, help="override the run seed (also read from $SRMC_SEED)")
        sp.add_argument("--workers", type=int, default=1, help="process count for sweep cells")
        sp.add_argument("--out", type=Path, help="output directory")

    r = sub.add_parser("run", help="execute an experiment config")
    r.add_argument("config", type=Path)
    common(r)
    s = sub.add_parser("sweep", help="execute a sweep config (grid x replicas)")
    s.add_argument("config", type=Path)
    common(s)
    v = sub.add_parser("verify", help="run the built-in invariant checks")
    v.add_argument("--filter", default=None, help="only checks whose name contains this substring")
    common(v)
    rep = sub.add_parser("report", help="write report.csv for a run directory")
    rep.add_argument("run_dir", type=Path)
    rep.add_argument("--cost-model", default=None, choices=["baseline-d", "srmc-3d", "measured"])
    return p


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    return None if env is None else int(env)


def _load(args):
    cfg = load_config(args.config)
    seed = _seed(args)
    if seed is not None and "run" in cfg:
        if seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        raw = dict(cfg)
        raw["run"] = apply_override(cfg["run"], "seed", seed)
        cfg = resolve_experiment(raw)
    return cfg


def _default_out(config_path: Path) -> Path:
    return Path("runs") / config_path.stem


def cmd_run(args, sweep_only=False) -> int:
    from .experiments import run_experiment

    cfg = _load(args)
    if sweep_only and cfg["experiment"] != "sweep":
        raise ConfigError("experiment", "sweep subcommand needs experiment = 'sweep'")
    out = args.out or _default_out(args.config)
    try:
        res = run_experiment(cfg, out, workers=max(1, args.workers))
    except (HistoryFault, FloatingPointError) as e:
        print(f"runtime fault: {e}; partial outputs kept in {out}", file=sys.stderr)
        return 3
    print(json.dumps(res, indent=2, sort_keys=True, default=float))
    if cfg["experiment"] == "run" and res.get("faults"):
        print(f"{res['faults']} chain(s) faulted; see {out}/summary.json", file=sys.stderr)
        return 3
    if cfg["experiment"] == "theory-verify" and not res["passed"]:
        return 1
    print(f"outputs written to {out}")
    return 0


def cmd_verify(args) -> int:
    from .verify import format_table, run_checks

    results = run_checks(args.filter)
    if not results:
        print(f"no check matches {args.filter!r}", file=sys.stderr)
        return 2
    print(format_table(results))
    ok = all(r.passed for r in results)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        report = {"passed": ok, "checks": [r._asdict() for r in results]}
        (args.out / "verify.json").write_text(json.dumps(report, indent=2) + "\n")
    return 0 if ok else 1


def cmd_report(args) -> int:
    from .experiments import report

    if not (args.run_dir / "summary.json").exists():
        print(f"{args.run_dir}: no summary.json (not a run directory)", file=sys.stderr)
        return 2
    path = report(args.run_dir, args.cost_model)
    print(path)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_run(args, sweep_only=True)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_report(args)
    except ConfigError as e:
        print(f"config error at {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
