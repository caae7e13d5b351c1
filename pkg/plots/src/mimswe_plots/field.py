"""Filled-contour rendering of a field snapshot.

Input: a snapshot CSV (x,y,value) on a uniform grid as written by the
harness; renders a filled contour image.
"""

import argparse
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .common import SchemaError, load_csv

REQUIRED = ("x", "y", "value")


def plot_field(snapshot_csv: str, out_path: str, levels: int = 24) -> dict:
    table = load_csv(snapshot_csv, REQUIRED)
    xs = np.unique(table["x"])
    ys = np.unique(table["y"])
    if len(xs) * len(ys) != len(table["value"]):
        raise SchemaError(f"{snapshot_csv}: rows do not form a full x-y grid")
    # rows are written x-major (y fastest)
    V = table["value"].reshape(len(xs), len(ys))
    fig, ax = plt.subplots(figsize=(5.4, 4.6))
    vmin, vmax = float(V.min()), float(V.max())
    if vmax - vmin < 1e-15 * max(1.0, abs(vmax)):
        mesh = ax.pcolormesh(xs, ys, V.T, shading="auto")
    else:
        mesh = ax.contourf(xs, ys, V.T, levels=levels)
    fig.colorbar(mesh, ax=ax)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return {"min": vmin, "max": vmax, "nx": len(xs), "ny": len(ys)}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("snapshot_csv")
    parser.add_argument("--out", default="field.png")
    parser.add_argument("--levels", type=int, default=24)
    args = parser.parse_args(argv)
    try:
        info = plot_field(args.snapshot_csv, args.out, levels=args.levels)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    print(f"value range = [{info['min']:.17g}, {info['max']:.17g}] "
          f"on {info['nx']}x{info['ny']} grid")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
