"""Plot the per-epoch columns of a bpnp trace.csv.

usage: python scripts/plot_trace.py RUN_DIR [COLUMN ...]

With no columns, plots `loss` on a log scale plus, for calib runs, the four
intrinsics. Writes RUN_DIR/trace.png. Requires matplotlib.
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main(argv):
    if len(argv) < 2:
        sys.exit(__doc__)
    run = Path(argv[1])
    with open(run / "trace.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        sys.exit(f"{run / 'trace.csv'} has no rows")
    columns = argv[2:] or [c for c in ("loss", "fx", "fy", "cx", "cy") if c in rows[0]]
    epochs = [int(r["epoch"]) for r in rows]

    fig, axes = plt.subplots(len(columns), 1, sharex=True, figsize=(6, 2.2 * len(columns)), squeeze=False)
    for ax, col in zip(axes[:, 0], columns):
        ax.plot(epochs, [float(r[col]) for r in rows])
        ax.set_ylabel(col)
        if col == "loss":
            ax.set_yscale("log")
    axes[-1, 0].set_xlabel("epoch")
    fig.tight_layout()
    fig.savefig(run / "trace.png", dpi=120)
    print(run / "trace.png")


if __name__ == "__main__":
    main(sys.argv)
