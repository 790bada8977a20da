#!/usr/bin/env python3
"""Plot a multi-footstep walk (walk/walk.csv): joint angles and the knee constraint."""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", help="walk.csv")
    ap.add_argument("-o", "--out", default="walk.png")
    args = ap.parse_args()

    df = pd.read_csv(args.csv)
    fig, (ax_q, ax_k) = plt.subplots(1, 2, figsize=(11, 3.5))
    for q in ["q1", "q2", "q3", "q4", "q5"]:
        ax_q.plot(df["t"], df[q], label=q)
    for t in df.groupby("footstep")["t"].min().iloc[1:]:
        for ax in (ax_q, ax_k):
            ax.axvline(t, color="grey", linestyle=":", linewidth=1)
    ax_q.set_title("joint angles")
    ax_q.legend(ncol=5, fontsize="small")
    ax_k.plot(df["t"], df["knee"])
    ax_k.axhline(0.0, color="k", linestyle="--", linewidth=1)
    ax_k.set_title("q4 - q5 (knee)")
    for ax in (ax_q, ax_k):
        ax.set_xlabel("t [s]")
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
