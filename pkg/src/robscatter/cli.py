"""``bench`` command line: run experiments, sweeps, property checks and exports.

Exit codes: 0 success, 1 a property check failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .bench import (
    SWEEP_AXES,
    ConfigError,
    ExperimentSpec,
    TrialReport,
    export,
    load_config,
    run_experiment,
    scaling_sweep,
)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2
REPORT_NAME = "last_report.json"


def state_dir(arg: str | None) -> Path:
    return Path(arg or os.environ.get("BENCH_STATE_DIR", ".bench"))


def _save(report: TrialReport, sdir: Path) -> None:
    sdir.mkdir(parents=True, exist_ok=True)
    (sdir / REPORT_NAME).write_text(report.to_json())


def _summary(report: TrialReport) -> str:
    lines = [f"{'estimator':<24} {'p':>4} {'n':>7} {'eps':>5}  err_op mean (std)"]
    for a in report.aggregates():
        lines.append(
            f"{a['estimator']:<24} {a['p']:>4} {a['n']:>7} {a['eps']:>5g}  "
            f"{a['err_op_mean']:.4f} ({a['err_op_std']:.4f})"
        )
    return "\n".join(lines)


def _finish(report: TrialReport, args) -> int:
    _save(report, state_dir(args.state_dir))
    if args.out:
        export(report, args.out, args.format)
    print(_summary(report))
    failed = [r for r in report.rows if r.error]
    for r in failed:
        print(f"trial {r.trial} {r.estimator}: {r.error}", file=sys.stderr)
    return EXIT_OK


def _maybe_full(spec: ExperimentSpec, args) -> ExperimentSpec:
    # table-scale runs: published optimizer settings and epoch counts
    return replace(spec, train_preset="published") if args.full else spec


def cmd_run(args) -> int:
    spec = _maybe_full(load_config(args.config), args)
    return _finish(run_experiment(spec), args)


def cmd_sweep(args) -> int:
    spec = _maybe_full(load_config(args.config) if args.config else ExperimentSpec(), args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    return _finish(scaling_sweep(spec, args.axis, values), args)


def cmd_check(args) -> int:
    from .checks import run_all

    results = run_all(quick=args.quick)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def cmd_export(args) -> int:
    path = state_dir(args.state_dir) / REPORT_NAME
    if not path.exists():
        raise ConfigError(f"no report at {path}; run 'bench run' or 'bench sweep' first")
    export(TrialReport.from_json(path.read_text()), args.out, args.format)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    ap.add_argument("--state-dir", default=None, help="where the last report is kept (default .bench)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_output(p):
        p.add_argument("--out", default=None, help="also write the report here")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--full", action="store_true", help="long runs with the full optimizer schedule")

    p = sub.add_parser("run", help="run one experiment from a key = value config")
    p.add_argument("--config", required=True)
    add_output(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vary one axis of an experiment")
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--config", default=None, help="base experiment (defaults otherwise)")
    add_output(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="run the numerical property checks")
    p.add_argument("--quick", action="store_true", help="smaller Monte-Carlo sizes")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("export", help="write the last report as csv or json")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
