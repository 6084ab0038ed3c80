"""Command-line entry point: sweep CSV in, trend figure out."""

from __future__ import annotations

import argparse
import sys

from .render import METRICS, PlotSpec, SchemaError, render


def build_parser():
    parser = argparse.ArgumentParser(
        prog="figplots",
        description="Render a multi-algorithm trend figure from a sweep CSV")
    parser.add_argument("--csv", required=True, help="sweep CSV path")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--y", default="log_objective", choices=METRICS,
                        dest="metric", help="column to plot (default log_objective)")
    parser.add_argument("--title", help="optional figure title")
    parser.add_argument("--overwrite", action="store_true",
                        help="replace the output file if it already exists")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    spec = PlotSpec(csv_path=args.csv, out_path=args.out, metric=args.metric,
                    title=args.title, overwrite=args.overwrite)
    try:
        out = render(spec)
    except (SchemaError, FileExistsError) as exc:
        print(f"figplots: {exc}", file=sys.stderr)
        return 1
    print(f"figure written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
