"""Log-log convergence plot with reference-slope guides.

Input: the harness errors.csv (columns h_mesh, err_q, err_F, err_K).
Prints the fitted slope of every error column and saves the figure.
"""

import argparse
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .common import SchemaError, fit_loglog, load_csv

REQUIRED = ("h_mesh", "err_q", "err_F", "err_K")
MARKERS = {"err_q": "o", "err_F": "s", "err_K": "^"}


def plot_convergence(error_csv: str, slopes, out_path: str) -> dict:
    """Render the plot; returns {column: (slope, stderr)}."""
    table = load_csv(error_csv, REQUIRED)
    hs = table["h_mesh"]
    fig, ax = plt.subplots(figsize=(5.2, 4.0))
    fitted = {}
    for name in ("err_q", "err_F", "err_K"):
        slope, err = fit_loglog(hs, table[name])
        fitted[name] = (slope, err)
        ax.loglog(hs, table[name], MARKERS[name] + "-",
                  label=f"{name} (slope {slope:.2f})")
    for guide in slopes:
        ref = table["err_F"][0] * (hs / hs[0]) ** guide
        ax.loglog(hs, ref, "b--", alpha=0.5, label=f"slope {guide:g}")
    ax.set_xlabel("element size h")
    ax.set_ylabel("L2 error")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return fitted


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("error_csv")
    parser.add_argument("--out", default="convergence.png")
    parser.add_argument("--slopes", type=float, nargs="*", default=[3.0],
                        help="reference slope guides")
    args = parser.parse_args(argv)
    try:
        fitted = plot_convergence(args.error_csv, args.slopes, args.out)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return 1
    for name, (slope, err) in fitted.items():
        print(f"fitted slope {name} = {slope:.17g} +- {err:.2g}")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
