"""Conservation-drift curves from harness timeseries files.

Input: one or more timeseries.csv files (step,time,mass,vorticity,energy,
enstrophy).  Plots normalized drifts against time; with several series the
per-series maxima are also fitted against the series' time step to annotate
the drift order.  Prints every maximum drift and the fitted orders.
"""

import argparse
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .common import SchemaError, fit_loglog, load_csv, normalized_drift, vorticity_drift

REQUIRED = ("step", "time", "mass", "vorticity", "energy", "enstrophy")
QUANTITIES = ("mass", "vorticity", "energy", "enstrophy")


def series_drifts(table: dict, normalize: bool) -> dict:
    out = {}
    for name in QUANTITIES:
        if name == "vorticity" and normalize:
            out[name] = vorticity_drift(table)
        elif normalize:
            out[name] = normalized_drift(table[name])
        else:
            out[name] = table[name] - table[name][0]
    return out


def plot_drift(paths, out_path: str, normalize: bool = True) -> dict:
    """Render drift curves; returns the per-series maxima and fitted orders."""
    tables = [load_csv(p, REQUIRED) for p in paths]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5), sharex=True)
    summary = {"series": []}
    for path, table in zip(paths, tables):
        drifts = series_drifts(table, normalize)
        dt = table["time"][1] - table["time"][0] if len(table["time"]) > 1 else 0.0
        entry = {"path": path, "dt": dt}
        for ax, name in zip(axes.ravel(), QUANTITIES):
            # floor exact zeros so the log axis stays drawable
            curve = np.maximum(np.abs(drifts[name]), 1e-18)
            ax.plot(table["time"], curve, label=f"dt={dt:g}")
            ax.set_yscale("log")
            ax.set_title(name)
            ax.grid(True, which="both", alpha=0.3)
            entry[f"max_{name}_drift"] = float(np.abs(drifts[name]).max())
        summary["series"].append(entry)
    for ax in axes[-1]:
        ax.set_xlabel("time")
    handles, labels = axes[0, 0].get_legend_handles_labels()
    if len(paths) > 1:
        dts = [e["dt"] for e in summary["series"]]
        for name in ("energy", "enstrophy"):
            maxima = [e[f"max_{name}_drift"] for e in summary["series"]]
            if min(maxima) > 0 and min(dts) > 0:
                order, _ = fit_loglog(dts, maxima)
                summary[f"order_{name}"] = order
                labels.append(f"{name} order ~ {order:.2f}")
                handles.append(plt.Line2D([], [], linestyle="none"))
    fig.legend(handles, labels, loc="lower center", ncol=3, fontsize=8)
    fig.tight_layout(rect=(0, 0.08, 1, 1))
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("timeseries", nargs="+")
    parser.add_argument("--out", default="drift.png")
    parser.add_argument("--normalize", action=argparse.BooleanOptionalAction,
                        default=True)
    args = parser.parse_args(argv)
    try:
        summary = plot_drift(args.timeseries, args.out, normalize=args.normalize)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    for entry in summary["series"]:
        for name in QUANTITIES:
            print(f"{entry['path']}: max_{name}_drift = "
                  f"{entry[f'max_{name}_drift']:.17g}")
    for name in ("energy", "enstrophy"):
        if f"order_{name}" in summary:
            print(f"fitted {name} drift order = {summary[f'order_{name}']:.17g}")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
