"""Command-line entry point: render one figure from a spec file."""

from __future__ import annotations

import argparse
import sys

from .errors import PlotError
from .figures import plot
from .spec import load_spec

EXIT_OK = 0
EXIT_ERROR = 2


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="ctrlplot",
        description="Render a figure from experiment artifacts.")
    parser.add_argument("--spec", required=True,
                        help="path to a figure spec JSON file")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress the output-path line")
    args = parser.parse_args(argv)
    try:
        result = plot(load_spec(args.spec))
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if not args.quiet:
        print(result.output)
    return EXIT_OK


def entry() -> None:
    raise SystemExit(main())
