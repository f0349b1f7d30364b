#!/usr/bin/env python3
"""Plot per-iteration solver traces (trace_*.csv written by `pnpreg restore`).

    plot_traces.py OUT.png trace_a.csv [trace_b.csv ...] [--column psnr]
"""

import argparse
import csv
import math
import sys
from pathlib import Path

COLUMNS = ("iter", "psnr", "iterate_mse", "objective")


def read_trace(path):
    """Columns of a trace CSV as float lists; empty cells become NaN."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or tuple(rows[0]) != COLUMNS:
        raise ValueError(f"{path}: expected header {','.join(COLUMNS)}")
    out = {c: [] for c in COLUMNS}
    for n, row in enumerate(rows[1:], start=2):
        if len(row) != len(COLUMNS):
            raise ValueError(f"{path}:{n}: expected {len(COLUMNS)} fields, got {len(row)}")
        for c, v in zip(COLUMNS, row):
            out[c].append(float(v) if v else math.nan)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("output")
    ap.add_argument("traces", nargs="+")
    ap.add_argument("--column", default="psnr", choices=COLUMNS[1:])
    args = ap.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for p in args.traces:
        t = read_trace(p)
        ax.plot(t["iter"], t[args.column], label=Path(p).stem.removeprefix("trace_"))
    if args.column == "iterate_mse":
        ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel(args.column)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output)
    return 0


if __name__ == "__main__":
    sys.exit(main())
