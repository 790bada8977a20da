#!/usr/bin/env python3
"""Plot loss, episode cost, penalty steepness and violations from train_log.jsonl."""
import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("runs", nargs="+", help="run directories (containing train_log.jsonl)")
    ap.add_argument("-o", "--out", default="training.png")
    args = ap.parse_args()

    fig, axes = plt.subplots(1, 4, figsize=(16, 3.2))
    for run in args.runs:
        lines = Path(run, "train_log.jsonl").read_text().splitlines()
        df = pd.DataFrame([json.loads(line) for line in lines])
        label = Path(run).name
        axes[0].semilogy(df["iteration"], df["loss"], label=label)
        axes[1].plot(df["iteration"], df["mean_episode_cost"], label=label)
        axes[2].plot(df["iteration"], df["k"], label=label)
        axes[3].plot(df["iteration"], df["violations"], label=label)
    for ax, title in zip(axes, ["loss", "episode cost", "k", "violating trajectories"]):
        ax.set_title(title)
        ax.set_xlabel("iteration")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
