"""Command-line entry point.

Usage:  cglblow MODE [--config FILE] [--set section.key=value] [--outdir DIR]
        [--figures]

MODE is one of simulate, sweep, verify-spectral, verify-semigroup,
verify-rhs, verify-modulation, report.  Exit status: 0 when every criterion
in the suite summary passed, 1 when a criterion failed, 2 on a
configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys

from .io import ConfigError, load_config
from .suites import SUITES


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cglblow",
        description="verification laboratory for flat blow-up dynamics",
    )
    parser.add_argument("mode", choices=sorted(SUITES))
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override a single configuration entry (repeatable)",
    )
    parser.add_argument("--outdir", help="output directory (default from config)")
    parser.add_argument(
        "--figures",
        action="store_true",
        help="also render the plot-data files as png figures",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.outdir is not None:
        overrides.append("suite.output_dir=" + json.dumps(args.outdir))
    if args.figures:
        overrides.append("suite.figures=true")
    try:
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    summary = SUITES[args.mode](cfg)
    for name, passed in sorted(summary["criteria"].items()):
        print(f"{'pass' if passed else 'FAIL'}  {name}")
    print(f"{args.mode}: {'ok' if summary['ok'] else 'FAILED'} -> {cfg.suite.output_dir}")
    return 0 if summary["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
