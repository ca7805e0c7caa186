#!/usr/bin/env python3
"""Plot factor and objective trajectories from `bicdo report` tables."""
import argparse
import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def series(path, value):
    out = defaultdict(list)
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out[row["class"]].append((int(row["iteration"]), float(row[value])))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("dir", type=Path, help="directory holding factors.csv and objectives.csv")
    ap.add_argument("-o", "--output", type=Path, default=None)
    args = ap.parse_args()

    factors = series(args.dir / "factors.csv", "factor_normalized")
    objectives = series(args.dir / "objectives.csv", "class_mean")
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True, figsize=(8, 7))
    for cls, pts in sorted(factors.items()):
        top.plot(*zip(*pts), label=cls)
    for cls, pts in sorted(objectives.items()):
        bottom.plot(*zip(*pts), label=cls)
    top.set_ylabel("normalized factor")
    bottom.set_ylabel("class objective")
    bottom.set_xlabel("iteration")
    top.legend(loc="best", fontsize="small")
    fig.tight_layout()
    fig.savefig(args.output or args.dir / "trajectories.png", dpi=120)


if __name__ == "__main__":
    main()
