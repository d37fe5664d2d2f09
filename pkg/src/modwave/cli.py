"""Command-line entry point.

Usage: modwave <command> --config PATH --out DIR [--seed INT] [--threads INT]
[--verbose]. Commands: profile, bloch, linear, simulate, decompose, verify,
full. Exit codes: 0 when every check passed, 2 when the pipeline completed
but a verification failed (the expected result for negative controls), 1 on
operational errors.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from .errors import ModwaveError
from .pipeline import ExperimentConfig, run_command

_COMMANDS = ("profile", "bloch", "linear", "simulate", "decompose",
             "verify", "full")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modwave",
        description="Periodic-wave modulational stability experiments.")
    parser.add_argument("command", choices=_COMMANDS,
                        help="pipeline stage to run")
    parser.add_argument("--config", required=True, metavar="PATH",
                        help="JSON experiment configuration")
    parser.add_argument("--out", required=True, metavar="DIR",
                        help="output directory for reports and plot data")
    parser.add_argument("--seed", type=int, default=None, metavar="INT",
                        help="override the data seed from the config")
    parser.add_argument("--threads", type=int, default=1, metavar="INT",
                        help="worker threads for spectral sampling")
    parser.add_argument("--verbose", action="store_true",
                        help="print progress while running")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.from_file(args.config)
        code, report = run_command(args.command, cfg, args.out,
                                   seed=args.seed, threads=args.threads,
                                   verbose=args.verbose)
    except (ModwaveError, OSError, ValueError, KeyError) as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        if args.verbose:
            traceback.print_exc()
        return 1
    verdict = "PASS" if code == 0 else "FAIL"
    print(f"{args.command}: {verdict} (exit {code})")
    if args.verbose:
        print(json.dumps(report, indent=2, default=str))
    return code


if __name__ == "__main__":
    sys.exit(main())
