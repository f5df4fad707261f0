"""Command line entry point: ``glplab <kind> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import os
import sys

from .config import KINDS, ConfigError, default_config, load_config
from .runner import RunError, run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glplab", description="Run world-model and planning experiments.")
    sub = parser.add_subparsers(dest="kind", metavar="KIND", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", metavar="FILE", help="experiment config file (defaults are used without one)")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides config and $GLPLAB_OUT)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    sub_usage = f"usage: glplab {args.kind} [--config FILE] [--seed N] [--out DIR]"
    if args.config is not None:
        if not os.path.isfile(args.config):
            print(sub_usage, file=sys.stderr)
            print(f"glplab: error: config file not found: {args.config}", file=sys.stderr)
            return 2
        try:
            cfg = load_config(args.config)
        except ConfigError as err:
            print(f"glplab: error: {args.config}: {err}", file=sys.stderr)
            return 2
        if cfg.kind != args.kind:
            print(f"glplab: error: {args.config} is a {cfg.kind!r} config, not {args.kind!r}", file=sys.stderr)
            return 2
    else:
        cfg = default_config(args.kind)
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])

    try:
        report = run_experiment(cfg, out=args.out, echo=print)
    except RunError as err:
        print(f"glplab: error: {err}", file=sys.stderr)
        return 1
    if report.value is not None:
        print(f"max relative error {report.value:.3e}")
    for c in report.checks:
        if not c.passed:
            print(f"FAIL {c.name}: {c.detail}")
    print(f"verdict {'PASS' if report.passed else 'FAIL'} ({report.out_dir / 'verdict.txt'})")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
