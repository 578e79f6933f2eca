"""Command-line entry point.

Parses arguments, delegates to the harness, and maps library errors to
exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 divergence. No experiment logic lives here.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigError, Diverged, GossipCtrlError, VersionMismatch
from . import harness

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_DIVERGED = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gossipctrl",
        description="Run and replay distributed online control experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a TOML experiment config")
    run_p.add_argument("--config", required=True, metavar="PATH",
                       help="TOML experiment description")
    run_p.add_argument("--out", metavar="DIR", default=None,
                       help="artifact directory (overrides config)")
    run_p.add_argument("--seed-override", type=int, default=None, metavar="N",
                       help="replace the config seed")
    run_p.add_argument("--mode-override", default=None,
                       choices=("known", "unknown", "sysid_only", "sweep"),
                       help="replace the config mode")
    run_p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")

    rep_p = sub.add_parser("replay",
                           help="re-run from a summary.json byte-identically")
    rep_p.add_argument("--summary", required=True, metavar="PATH",
                       help="summary.json from a previous run")
    rep_p.add_argument("--out", required=True, metavar="DIR",
                       help="directory for the replayed artifacts")
    rep_p.add_argument("--quiet", action="store_true",
                       help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            arts = harness.run(
                args.config, args.out,
                seed_override=args.seed_override,
                mode_override=args.mode_override,
                quiet=args.quiet,
            )
            if not args.quiet:
                print(f"artifacts written to {arts.out_dir}")
            return EXIT_OK
        arts = harness.replay(args.summary, args.out, quiet=args.quiet)
        if not args.quiet:
            print(arts.message)
        if not arts.ok:
            print("replay mismatch: "
                  f"stored {arts.stored_sha} != new {arts.new_sha}",
                  file=sys.stderr)
            return EXIT_NUMERICAL
        return EXIT_OK
    except (ConfigError, VersionMismatch) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Diverged as e:
        print(f"divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except GossipCtrlError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
