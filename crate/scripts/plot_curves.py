#!/usr/bin/env python3
"""Plot accuracy against simulated time for one or more run directories.

usage: plot_curves.py OUT.png RUN_DIR [RUN_DIR ...]
"""
import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def load(run_dir):
    with open(run_dir / "metrics.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    times = [float(r["sim_time"]) for r in rows]
    acc = [float(r["global_acc"]) for r in rows]
    label = run_dir.name
    summary = run_dir / "summary.json"
    if summary.exists():
        s = json.loads(summary.read_text())
        label = f"{s['variant']} (seed {s['seed']})"
    return label, times, acc


def main(argv):
    if len(argv) < 3:
        sys.exit(__doc__)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for d in argv[2:]:
        label, t, a = load(Path(d))
        ax.plot(t, a, label=label)
    ax.set_xlabel("simulated time (s)")
    ax.set_ylabel("test accuracy")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(argv[1], dpi=120)


if __name__ == "__main__":
    main(sys.argv)
