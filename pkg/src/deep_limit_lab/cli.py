"""Command line front end.

    deep-limit-lab <subcommand> --config <path> --out <dir> [--seeds K] [--jobs J]

Subcommands: trajectory-study, sde-couple, fp-study, annuli-train, report.
Exit codes: 0 ok, 1 study failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import traceback

from .config import UsageError, load_config
from .studies import run_report, run_study

_KIND_BY_COMMAND = {
    "trajectory-study": "trajectory",
    "sde-couple": "sde-couple",
    "fp-study": "fp",
    "annuli-train": "annuli",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deep-limit-lab",
        description="Depth-sweep studies of residual Euler flows and their "
        "continuous-depth limit.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _KIND_BY_COMMAND:
        p = sub.add_parser(name, help=f"run the {name.replace('-', ' ')}")
        p.add_argument("--config", required=True, help="study config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seeds", type=int, default=None, help="override seed count")
        p.add_argument("--jobs", type=int, default=1, help="worker budget (>= 1)")
    p = sub.add_parser("report", help="aggregate study outputs into summary, .dat, figures")
    p.add_argument("--out", required=True, help="directory holding study outputs")
    p.add_argument("--jobs", type=int, default=1, help="worker budget (>= 1)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "jobs", 1) is not None and args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.command == "report":
            summary = run_report(args.out)
            print(f"report written: {summary}")
            return 0
        cfg = load_config(args.config)
        expected = _KIND_BY_COMMAND[args.command]
        if cfg.kind != expected:
            raise UsageError(
                f"config kind {cfg.kind!r} does not match subcommand "
                f"{args.command!r} (expected {expected!r})"
            )
        manifest = run_study(cfg, args.out, seeds_override=args.seeds)
        print(f"study complete: {manifest}")
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # study failure
        print(f"study failed: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
