"""figures CLI: render one spec or all default figures from a results.csv."""

from __future__ import annotations

import argparse
import sys

from .render import FigureError, FigureSpec, render, render_all


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="figures", description=__doc__)
    parser.add_argument("--spec", help="figure spec JSON: {kind, csv, out, filters?, title?}")
    parser.add_argument("--all", action="store_true", help="render every kind with defaults")
    parser.add_argument("--csv", help="results.csv path (with --all)")
    parser.add_argument("--out", help="output directory (with --all)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.spec:
            result = render(FigureSpec.from_json_file(args.spec))
            print(f"wrote {result.out_path}")
            return 0
        if args.all:
            if not args.csv or not args.out:
                raise FigureError("--all needs --csv and --out")
            for result in render_all(args.csv, args.out):
                print(f"wrote {result.out_path}")
            return 0
        raise FigureError("nothing to do: pass --spec or --all")
    except FigureError as err:
        print(f"figure error: {err}", file=sys.stderr)
        return 2
    except Exception as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
