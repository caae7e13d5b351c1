"""Shared CSV loading, validation and fitting helpers for the plot scripts.

The scripts are pure file-in/file-out: they consume the solver harness CSV
schemas and never import the solver.
"""

import math

import numpy as np


class SchemaError(ValueError):
    """Input file does not match the expected CSV schema."""


def load_csv(path: str, required_columns) -> dict:
    """Load a headered CSV and validate its column set.

    Returns a dict column name -> float array; raises SchemaError on a
    missing/renamed column or an empty table.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc}") from exc
    names = header.split(",") if header else []
    missing = [c for c in required_columns if c not in names]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; header was {names}")
    data = np.genfromtxt(path, delimiter=",", names=True, ndmin=1)
    if data.size == 0:
        raise SchemaError(f"{path}: no data rows")
    return {name: np.atleast_1d(data[name]).astype(float) for name in names}


def fit_loglog(xs, ys):
    """Least-squares slope of log y vs log x with its standard error."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    n = len(lx)
    slope, intercept = np.polyfit(lx, ly, 1)
    if n > 2:
        resid = ly - (slope * lx + intercept)
        var = np.sum(resid**2) / (n - 2)
        stderr = math.sqrt(var / np.sum((lx - lx.mean()) ** 2))
    else:
        stderr = 0.0
    return float(slope), float(stderr)


def normalized_drift(series: np.ndarray) -> np.ndarray:
    """(A(t) - A(0)) / A(0)."""
    return (series - series[0]) / series[0]


def vorticity_drift(table: dict) -> np.ndarray:
    """Absolute vorticity drift scaled by the enstrophy-derived magnitude.

    Total vorticity is exactly zero on the torus, so the usual relative
    drift would divide by zero; sqrt(enstrophy * mass) at t=0 has the units
    of a vorticity integral and serves as the scale.
    """
    v = table["vorticity"]
    scale = math.sqrt(max(table["enstrophy"][0], 0.0) * abs(table["mass"][0]))
    return (v - v[0]) / scale
