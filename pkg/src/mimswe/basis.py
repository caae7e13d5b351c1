"""One-dimensional Gauss-Lobatto-Legendre building blocks.

This module provides the GLL point sets, the Lagrange (nodal) polynomials
through those points, the edge (histopolant) polynomials derived from them,
GLL quadrature rules, and the one-dimensional incidence matrix that applies
d/dxi directly to nodal degrees of freedom.  Everything lives on the
reference interval [-1, 1]; higher-dimensional spaces are tensor products
built elsewhere.

The nodal basis l_i satisfies l_i(xi_j) = delta_ij.  The edge basis

    e_i(xi) = -sum_{k<i} dl_k/dxi,    i = 1..p,

has degree p-1 and unit integral over the i-th GLL subinterval and zero
integral over all others, so expansion coefficients of an edge expansion are
subinterval integrals ("histopolation").  The two bases satisfy the
fundamental theorem of calculus exactly: differentiating a nodal expansion
gives an edge expansion whose coefficients are differences of the nodal
ones.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

NEWTON_TOL = 1e-15
NEWTON_MAX_ITER = 100


def legendre_derivs(p: int, x):
    """Evaluate the Legendre polynomial L_p and its first two derivatives.

    Uses the three-term recurrence, which is numerically stable for all
    degrees needed here.

    Args:
        p: Polynomial degree (>= 0).
        x: Scalar or array of evaluation points.

    Returns:
        Tuple (L, dL, d2L) of arrays shaped like ``x``.
    """
    x = np.asarray(x, dtype=float)
    L0 = np.ones_like(x)
    dL0 = np.zeros_like(x)
    d2L0 = np.zeros_like(x)
    if p == 0:
        return L0, dL0, d2L0
    L1, dL1, d2L1 = L0, dL0, d2L0
    L0, dL0, d2L0 = x.copy(), np.ones_like(x), np.zeros_like(x)
    for k in range(1, p):
        a = (2 * k + 1) / (k + 1)
        b = k / (k + 1)
        L2, dL2, d2L2 = L1, dL1, d2L1
        L1, dL1, d2L1 = L0, dL0, d2L0
        L0 = a * x * L1 - b * L2
        dL0 = a * (L1 + x * dL1) - b * dL2
        d2L0 = a * (2 * dL1 + x * d2L1) - b * d2L2
    return L0, dL0, d2L0


def gll_nodes(p: int) -> np.ndarray:
    """Compute the p+1 Gauss-Lobatto-Legendre nodes on [-1, 1].

    The nodes are the roots of (1 - xi^2) dL_p/dxi, found by Newton
    iteration on dL_p/dxi seeded with Chebyshev-Lobatto points.  The
    endpoints are pinned to exactly -1 and +1 and the interior roots are
    symmetrized about zero.

    Args:
        p: Polynomial degree, >= 1.

    Returns:
        Array of p+1 strictly increasing nodes with nodes[0] == -1 and
        nodes[p] == +1.

    Raises:
        ValueError: If p < 1.
        NumericalError: If the Newton iteration fails to converge.
    """
    if p < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {p}")
    if p == 1:
        return np.array([-1.0, 1.0])
    x = -np.cos(np.pi * np.arange(1, p) / p)
    for _ in range(NEWTON_MAX_ITER):
        _, dL, d2L = legendre_derivs(p, x)
        dx = dL / d2L
        x = x - dx
        if np.max(np.abs(dx)) < NEWTON_TOL:
            break
    else:
        raise NumericalError(f"GLL node iteration did not converge for p={p}")
    x = 0.5 * (x - x[::-1])  # enforce symmetry; exact 0 at the center for odd counts
    nodes = np.concatenate(([-1.0], x, [1.0]))
    if np.any(np.diff(nodes) <= 0):
        raise NumericalError(f"GLL nodes not strictly increasing for p={p}")
    return nodes


@dataclass(frozen=True)
class Basis1D:
    """Degree-p GLL nodal/edge basis on [-1, 1].

    Attributes:
        p: Polynomial degree.
        nodes: The p+1 GLL nodes, ascending, endpoints exactly +-1.
    """

    p: int
    nodes: np.ndarray

    @classmethod
    def create(cls, p: int) -> "Basis1D":
        return cls(p=p, nodes=gll_nodes(p))

    def nodal_values(self, x) -> np.ndarray:
        """All Lagrange polynomials at points ``x``; shape (npts, p+1)."""
        return nodal_values(self.nodes, x)

    def nodal_derivatives(self, x) -> np.ndarray:
        """All Lagrange polynomial derivatives at ``x``; shape (npts, p+1)."""
        return nodal_derivatives(self.nodes, x)

    def edge_values(self, x) -> np.ndarray:
        """All edge polynomials e_1..e_p at ``x``; shape (npts, p)."""
        return edge_values(self.nodes, x)


def nodal_values(nodes: np.ndarray, x) -> np.ndarray:
    """Evaluate every Lagrange polynomial on ``nodes`` at points ``x``.

    Direct product formula; exact Kronecker property at the nodes since the
    zero factors are computed exactly.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    diff_x = x[:, None] - nodes[None, :]            # (npts, n)
    diff_n = nodes[:, None] - nodes[None, :]        # (n, n)
    vals = np.ones((len(x), n))
    for k in range(n):
        mask = np.arange(n) != k
        vals[:, mask] *= diff_x[:, [k]] / diff_n[mask, k]
    return vals


def nodal_derivatives(nodes: np.ndarray, x) -> np.ndarray:
    """Evaluate every Lagrange polynomial derivative on ``nodes`` at ``x``.

    dl_i/dxi = sum_{m != i} 1/(xi_i - xi_m) prod_{k != i,m} (x - xi_k)/(xi_i - xi_k).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = len(nodes)
    out = np.zeros((len(x), n))
    for i in range(n):
        for m in range(n):
            if m == i:
                continue
            term = np.ones(len(x)) / (nodes[i] - nodes[m])
            for k in range(n):
                if k == i or k == m:
                    continue
                term *= (x - nodes[k]) / (nodes[i] - nodes[k])
            out[:, i] += term
    return out


def edge_values(nodes: np.ndarray, x) -> np.ndarray:
    """Evaluate the p edge (histopolant) polynomials at ``x``.

    e_i = -sum_{k=0}^{i-1} dl_k/dxi for i = 1..p; column j holds e_{j+1}.
    """
    dl = nodal_derivatives(nodes, x)
    return -np.cumsum(dl, axis=1)[:, : len(nodes) - 1]


def lagrange_eval(basis: Basis1D, i: int, xi):
    """Value of the i-th Lagrange polynomial l_i at xi (i in 0..p)."""
    if not 0 <= i <= basis.p:
        raise IndexError(f"nodal index {i} out of range 0..{basis.p}")
    vals = nodal_values(basis.nodes, xi)[:, i]
    return vals[0] if np.isscalar(xi) else vals


def lagrange_deriv(basis: Basis1D, i: int, xi):
    """Derivative dl_i/dxi at xi (i in 0..p)."""
    if not 0 <= i <= basis.p:
        raise IndexError(f"nodal index {i} out of range 0..{basis.p}")
    vals = nodal_derivatives(basis.nodes, xi)[:, i]
    return vals[0] if np.isscalar(xi) else vals


def edge_eval(basis: Basis1D, i: int, xi):
    """Value of the i-th edge polynomial e_i at xi (i in 1..p)."""
    if not 1 <= i <= basis.p:
        raise IndexError(f"edge index {i} out of range 1..{basis.p}")
    vals = edge_values(basis.nodes, xi)[:, i - 1]
    return vals[0] if np.isscalar(xi) else vals


@dataclass(frozen=True)
class QuadRule:
    """GLL quadrature rule: n points, positive weights, exact to degree 2n-3."""

    n: int
    points: np.ndarray
    weights: np.ndarray


def gll_quadrature(n: int) -> QuadRule:
    """Build the n-point GLL quadrature rule on [-1, 1].

    Weights are w_i = 2 / (n (n-1) L_{n-1}(x_i)^2); the rule integrates
    polynomials up to degree 2n-3 exactly.

    Args:
        n: Number of points, >= 2.

    Raises:
        ValueError: If n < 2.
    """
    if n < 2:
        raise ValueError(f"GLL quadrature needs at least 2 points, got {n}")
    pts = gll_nodes(n - 1)
    L, _, _ = legendre_derivs(n - 1, pts)
    wts = 2.0 / (n * (n - 1) * L**2)
    return QuadRule(n=n, points=pts, weights=wts)


def incidence_1d(p: int) -> np.ndarray:
    """The p x (p+1) bidiagonal incidence matrix applying d/dxi to nodal DOFs.

    Row i carries (-1, +1) in columns (i, i+1): coefficients of the
    derivative of a nodal expansion in the edge basis are differences of
    adjacent nodal coefficients.  Integer valued; each row sums to zero.
    """
    if p < 1:
        raise ValueError(f"polynomial degree must be >= 1, got {p}")
    E = np.zeros((p, p + 1), dtype=np.int64)
    rows = np.arange(p)
    E[rows, rows] = -1
    E[rows, rows + 1] = 1
    return E
