"""Command-line interface: render figures and tables from runner CSVs."""

from __future__ import annotations

import argparse
import os
import sys

from . import plots


def _series(values):
    """Parse label=path arguments; a bare path labels itself."""
    out = {}
    for v in values:
        if "=" in v:
            label, path = v.split("=", 1)
        else:
            label, path = os.path.splitext(os.path.basename(v))[0], v
        out[label] = path
    return out


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sfclab-analysis",
        description="figures and tables from sfclab evaluation CSVs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("learning", "learning curves (mean reward vs steps)"),
            ("energy", "hourly energy comparison"),
            ("latency", "hourly latency comparison"),
            ("table", "per-slice latency / links table")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("inputs", nargs="+",
                       help="CSV files, optionally as label=path")
        p.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    series = _series(args.inputs)
    try:
        if args.command == "learning":
            out = os.path.join(args.out, "learning.png")
            plots.plot_learning(series, out)
        elif args.command == "energy":
            out = os.path.join(args.out, "energy.png")
            plots.plot_energy(series, out)
        elif args.command == "latency":
            out = os.path.join(args.out, "latency.png")
            plots.plot_latency(series, out)
        else:
            out = os.path.join(args.out, "per_slice.txt")
            text = plots.render_slice_table(series, out)
            print(text, end="")
    except plots.SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
