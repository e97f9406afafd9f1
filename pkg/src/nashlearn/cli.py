"""Command-line entry point.

Exit codes: 0 on success, 1 for configuration/usage problems, 2 for
runtime failures (solver breakdowns, I/O errors mid-run, ...).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import (
    available_problems,
    evaluate_run,
    load_config,
    run_experiment,
    run_repeats,
    summary_text,
)
from .exceptions import ConfigError


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on usage errors; route them through
    # ConfigError so every bad invocation lands on exit code 1.
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="nashlearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("config", help="path to the JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument(
        "--repeat", type=int, default=None, help="override the config repeat count"
    )
    p_run.add_argument("--out", default=None, help="override the output directory")

    sub.add_parser("list-problems", help="list registered benchmark problems")

    p_eval = sub.add_parser("evaluate", help="recompute metrics for a stored run")
    p_eval.add_argument("run_dir", help="run directory written by 'run'")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.repeat is not None:
        if args.repeat < 1:
            raise ConfigError("--repeat: must be >= 1")
        cfg.repeat = args.repeat
    if args.out is not None:
        cfg.out_dir = args.out

    if cfg.repeat > 1:
        records, aggregate = run_repeats(cfg, out_dir=cfg.out_dir)
        for rec in records:
            print(f"--- seed {rec.seed} ---")
            print(summary_text(rec), end="")
        for key, stats in aggregate.items():
            print(f"{key}: median={stats['median']:.6g} iqr={stats['iqr']:.6g}")
    else:
        record = run_experiment(cfg, seed=cfg.seed, out_dir=cfg.out_dir)
        print(summary_text(record), end="")
    return 0


def _cmd_list() -> int:
    for pid, desc in available_problems().items():
        print(f"{pid}: {desc}")
    return 0


def _cmd_evaluate(args) -> int:
    result = evaluate_run(args.run_dir)
    for key, value in result.items():
        if isinstance(value, np.ndarray):
            value = " ".join(format(float(v), ".17g") for v in value)
        print(f"{key}: {value}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "list-problems":
            return _cmd_list()
        return _cmd_evaluate(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
