"""Command line entry point: plotkit <kind> --in <csv> --out <img>.

One subcommand per plot kind, sharing the same flags.  --in repeats to
overlay several tables on one figure.  Exit codes: 0 on success, 1 for
request and table problems, 2 for filesystem failures.
"""

import argparse
import sys

from .errors import PlotError
from .figures import KINDS, PlotSpec, render

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad flags through the normal error path."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise PlotError(message)


def _csv_list(text):
    return tuple(tok.strip() for tok in text.split(",") if tok.strip())


def _add_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--in", dest="inputs", action="append", required=True,
                   metavar="CSV", help="input table; repeat to overlay")
    p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p.add_argument("--x", help="x column (default: layout-dependent)")
    p.add_argument("--y", help="comma list of y columns")
    p.add_argument("--group", help="comma list of columns that split curves")
    p.add_argument("--xlabel", help="x axis label (default: x column name)")
    p.add_argument("--ylabel", help="y axis label (default: y column names)")
    p.add_argument("--title", help="figure title")


def _build_parser() -> _Parser:
    parser = _Parser(prog="plotkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"draw a {kind} figure")
        _add_flags(p)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        spec = PlotSpec(
            kind=args.kind,
            inputs=tuple(args.inputs),
            out=args.out,
            x=args.x,
            y=_csv_list(args.y) if args.y is not None else None,
            group=_csv_list(args.group) if args.group is not None else None,
            xlabel=args.xlabel,
            ylabel=args.ylabel,
            title=args.title,
        )
        out = render(spec)
        print(f"wrote {out}")
        return 0
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
