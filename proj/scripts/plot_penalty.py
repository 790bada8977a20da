#!/usr/bin/env python3
"""Plot penalty curves written by `dfbsde penalty-plot` (columns kind,k,x,p)."""
import argparse

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("csv", nargs="+", help="one or more penalty-plot CSV files")
    ap.add_argument("-o", "--out", default="penalty.png")
    args = ap.parse_args()

    fig, axes = plt.subplots(1, len(args.csv), figsize=(5 * len(args.csv), 3.5), squeeze=False)
    for ax, path in zip(axes[0], args.csv):
        df = pd.read_csv(path)
        for k, curve in df.groupby("k"):
            ax.plot(curve["x"], curve["p"], label=f"k = {k:g}")
        ax.set_title(df["kind"].iloc[0])
        ax.set_xlabel("x")
        ax.set_ylabel("p(x)")
        ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
