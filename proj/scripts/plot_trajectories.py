#!/usr/bin/env python3
"""Plot evaluation trajectories (eval/trajectories.csv) of one or more runs.

Each run is drawn as the min/max band over trials plus one sample trial.
Constraint bounds are read from the run's config.resolved.json when the
constraint row selects a single state.
"""
import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def state_columns(df):
    cols = list(df.columns)
    start = cols.index("t") + 1
    end = cols.index("y")
    return cols[start:end]


def bounds(run_dir, states):
    cfg_path = Path(run_dir) / "config.resolved.json"
    if not cfg_path.exists():
        return {}
    pen = json.loads(cfg_path.read_text())["penalty"]
    out = {}
    for row, lo, hi in zip(pen["c_map"], pen["b_min"], pen["b_max"]):
        nz = [i for i, a in enumerate(row) if a != 0.0]
        if len(nz) == 1 and row[nz[0]] == 1.0 and nz[0] < len(states):
            out[states[nz[0]]] = (lo, hi)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("runs", nargs="+", help="run directories (containing eval/trajectories.csv)")
    ap.add_argument("--trial", type=int, default=0, help="sample trial to highlight")
    ap.add_argument("-o", "--out", default="trajectories.png")
    args = ap.parse_args()

    frames = [pd.read_csv(Path(r) / "eval" / "trajectories.csv") for r in args.runs]
    states = state_columns(frames[0])
    fig, axes = plt.subplots(1, len(states), figsize=(4 * len(states), 3.2), squeeze=False)
    for run, df in zip(args.runs, frames):
        label = Path(run).name
        grouped = df.groupby("t")
        for ax, s in zip(axes[0], states):
            t = np.array(sorted(df["t"].unique()))
            line = ax.plot(t, df[df["trial"] == args.trial][s], label=label)[0]
            ax.fill_between(t, grouped[s].min(), grouped[s].max(), color=line.get_color(), alpha=0.2)
    for ax, s in zip(axes[0], states):
        for lo, hi in [bounds(args.runs[0], states).get(s, (None, None))]:
            for b in (lo, hi):
                if b is not None:
                    ax.axhline(b, color="k", linestyle="--", linewidth=1)
        ax.set_title(s)
        ax.set_xlabel("t [s]")
    axes[0][0].legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
