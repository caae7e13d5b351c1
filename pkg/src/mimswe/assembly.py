"""Quadrature, mass/coupling matrix assembly and SPD solves on the mapped mesh.

All elements are axis-aligned affine rectangles, so one reference-element
tabulation serves the whole mesh.  Physical transforms keep every DOF
metric-free: W functions map unchanged, U functions carry the contravariant
(flux-preserving) scaling, and Q functions scale with the inverse Jacobian.
The incidence matrices therefore act on physical DOFs without any metric
factors, which the algebraic conservation arguments rely on.

Quadrature modes: 'exact' uses n = ceil((3p+3)/2) GLL points per direction
(exact for products of three degree-p factors), 'inexact' collocates at the
p+1 GLL nodes, which makes the W mass matrix diagonal but under-integrates
the nonlinear couplings.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import Basis1D, QuadRule, gll_quadrature
from .errors import ConvergenceError
from .fields import Field, require_space
from .topology import DofMap, MeshTopology

CG_RTOL = 1e-12
PROJECTION_POINTS = 12  # Gauss points per subinterval for canonical DOFs

COUPLING_KINDS = ("Uq", "Uh", "Uu", "Wh", "Wq", "Qw", "Uf")
_COEFF_SPACE = {"Uq": "W", "Uf": "W", "Wq": "W", "Uh": "Q", "Wh": "Q", "Uu": "U"}


def exact_point_count(p: int) -> int:
    """Points per direction integrating triple products of degree-p factors."""
    return (3 * p + 4) // 2  # ceil((3p+3)/2)


@dataclass(frozen=True)
class AssemblyContext:
    """Quadrature rule plus reference tabulations and Jacobian factors.

    Tabulations are stored with the Piola scalings folded in, so a matrix
    entry is a plain weighted dot product of columns.  Point index
    q = a*n + b pairs the a-th xi point with the b-th eta point; local DOF
    columns follow the element-local numbering of ``topology.local_indices``
    (U split into its x-normal and y-normal halves).
    """

    mode: str
    quad: QuadRule
    mesh: MeshTopology
    w2: np.ndarray    # (nq2,) physical quadrature weights
    BW: np.ndarray    # (nq2, (p+1)^2)
    BUx: np.ndarray   # (nq2, p(p+1)) x-components of x-normal functions
    BUy: np.ndarray   # (nq2, p(p+1)) y-components of y-normal functions
    BQ: np.ndarray    # (nq2, p^2)
    XQ: np.ndarray    # (nel, nq2) physical quadrature point coordinates
    YQ: np.ndarray

    @classmethod
    def create(cls, mesh: MeshTopology, mode: str = "exact",
               n_points: int | None = None) -> "AssemblyContext":
        if mode not in ("exact", "inexact"):
            raise ValueError(f"quadrature mode must be 'exact' or 'inexact', got {mode!r}")
        p = mesh.p
        if n_points is None:
            n_points = exact_point_count(p) if mode == "exact" else p + 1
        quad = gll_quadrature(n_points)
        basis = Basis1D.create(p)
        L = basis.nodal_values(quad.points)   # (n, p+1)
        E = basis.edge_values(quad.points)    # (n, p)
        n = n_points
        dx, dy = mesh.dx, mesh.dy

        w2 = (np.outer(quad.weights, quad.weights) * (dx * dy / 4.0)).ravel()
        BW = (L[:, None, :, None] * L[None, :, None, :]).reshape(n * n, -1)
        BUx = (L[:, None, :, None] * E[None, :, None, :]).reshape(n * n, -1) * (2.0 / dy)
        BUy = (E[:, None, :, None] * L[None, :, None, :]).reshape(n * n, -1) * (2.0 / dx)
        BQ = (E[:, None, :, None] * E[None, :, None, :]).reshape(n * n, -1) * (4.0 / (dx * dy))

        xq = mesh.x0 + dx * (np.arange(mesh.nx)[:, None] + (quad.points[None, :] + 1) / 2)
        yq = mesh.y0 + dy * (np.arange(mesh.ny)[:, None] + (quad.points[None, :] + 1) / 2)
        shape = (mesh.nx, mesh.ny, n, n)
        XQ = np.broadcast_to(xq[:, None, :, None], shape).reshape(mesh.n_elements, n * n)
        YQ = np.broadcast_to(yq[None, :, None, :], shape).reshape(mesh.n_elements, n * n)
        return cls(mode=mode, quad=quad, mesh=mesh, w2=w2, BW=BW, BUx=BUx,
                   BUy=BUy, BQ=BQ, XQ=XQ.copy(), YQ=YQ.copy())

    @property
    def n_half_u(self) -> int:
        return self.BUx.shape[1]


@dataclass
class SparseOperator:
    """Assembled sparse operator with a declared symmetry."""

    matrix: sp.csr_matrix
    symmetry: str = "none"  # 'symmetric' | 'skew' | 'none'

    @property
    def shape(self):
        return self.matrix.shape

    def symmetry_defect(self) -> float:
        """max|A -+ A^T| / max|A| for the declared symmetry (0 for 'none')."""
        if self.symmetry == "none":
            return 0.0
        A = self.matrix
        D = (A - A.T) if self.symmetry == "symmetric" else (A + A.T)
        scale = np.abs(A.data).max() if A.nnz else 1.0
        defect = np.abs(D.data).max() if D.nnz else 0.0
        return defect / scale


def _scatter(rows, cols, blocks, shape) -> sp.csr_matrix:
    """Accumulate per-element blocks into a global CSR matrix.

    rows: (nel, a), cols: (nel, b), blocks: (nel, a, b) or (a, b) shared.
    """
    nel, a = rows.shape
    b = cols.shape[1]
    blocks = np.broadcast_to(blocks, (nel, a, b))
    r = np.broadcast_to(rows[:, :, None], (nel, a, b)).ravel()
    c = np.broadcast_to(cols[:, None, :], (nel, a, b)).ravel()
    return sp.coo_matrix((blocks.ravel(), (r, c)), shape=shape).tocsr()


def _u_halves(dofmap: DofMap, ctx: AssemblyContext):
    h = ctx.n_half_u
    return dofmap.LU[:, :h], dofmap.LU[:, h:]


# --- point-value evaluation / moment integration against the bases ---------

def eval_W(ctx: AssemblyContext, dofmap: DofMap, coeffs: np.ndarray) -> np.ndarray:
    """Values of a W expansion at all quadrature points; (nel, nq2)."""
    return np.einsum("qi,ei->eq", ctx.BW, coeffs[dofmap.LW], optimize=True)


def eval_U(ctx: AssemblyContext, dofmap: DofMap, coeffs: np.ndarray):
    """Vector values (ux, uy) of a U expansion at quadrature points."""
    LUx, LUy = _u_halves(dofmap, ctx)
    ux = np.einsum("qi,ei->eq", ctx.BUx, coeffs[LUx], optimize=True)
    uy = np.einsum("qi,ei->eq", ctx.BUy, coeffs[LUy], optimize=True)
    return ux, uy


def eval_Q(ctx: AssemblyContext, dofmap: DofMap, coeffs: np.ndarray) -> np.ndarray:
    """Values of a Q expansion at all quadrature points; (nel, nq2)."""
    return np.einsum("qi,ei->eq", ctx.BQ, coeffs[dofmap.LQ], optimize=True)


def integrate_W(ctx: AssemblyContext, dofmap: DofMap, vals: np.ndarray) -> np.ndarray:
    """Moments integral(vals * eps_i^W) for every global W function."""
    local = np.einsum("eq,qi->ei", vals * ctx.w2, ctx.BW, optimize=True)
    return np.bincount(dofmap.LW.ravel(), weights=local.ravel(), minlength=dofmap.dW)


def integrate_U(ctx: AssemblyContext, dofmap: DofMap, vx: np.ndarray,
                vy: np.ndarray) -> np.ndarray:
    """Moments integral(v . eps_i^U) for every global U function."""
    LUx, LUy = _u_halves(dofmap, ctx)
    lx = np.einsum("eq,qi->ei", vx * ctx.w2, ctx.BUx, optimize=True)
    ly = np.einsum("eq,qi->ei", vy * ctx.w2, ctx.BUy, optimize=True)
    out = np.bincount(LUx.ravel(), weights=lx.ravel(), minlength=dofmap.dU)
    out += np.bincount(LUy.ravel(), weights=ly.ravel(), minlength=dofmap.dU)
    return out


def integrate_Q(ctx: AssemblyContext, dofmap: DofMap, vals: np.ndarray) -> np.ndarray:
    """Moments integral(vals * eps_i^Q) for every global Q function."""
    local = np.einsum("eq,qi->ei", vals * ctx.w2, ctx.BQ, optimize=True)
    return np.bincount(dofmap.LQ.ravel(), weights=local.ravel(), minlength=dofmap.dQ)


# --- mass and coupling matrices ---------------------------------------------

def assemble_mass(space: str, ctx: AssemblyContext, mesh: MeshTopology,
                  dofmap: DofMap) -> SparseOperator:
    """Gram matrix of W, U or Q on the physical mesh (SPD)."""
    if space == "W":
        block = np.einsum("q,qi,qj->ij", ctx.w2, ctx.BW, ctx.BW, optimize=True)
        mat = _scatter(dofmap.LW, dofmap.LW, block, (dofmap.dW, dofmap.dW))
    elif space == "U":
        LUx, LUy = _u_halves(dofmap, ctx)
        bx = np.einsum("q,qi,qj->ij", ctx.w2, ctx.BUx, ctx.BUx, optimize=True)
        by = np.einsum("q,qi,qj->ij", ctx.w2, ctx.BUy, ctx.BUy, optimize=True)
        mat = _scatter(LUx, LUx, bx, (dofmap.dU, dofmap.dU))
        mat = mat + _scatter(LUy, LUy, by, (dofmap.dU, dofmap.dU))
    elif space == "Q":
        block = np.einsum("q,qi,qj->ij", ctx.w2, ctx.BQ, ctx.BQ, optimize=True)
        mat = _scatter(dofmap.LQ, dofmap.LQ, block, (dofmap.dQ, dofmap.dQ))
    else:
        raise ValueError(f"unknown space {space!r}")
    return SparseOperator(matrix=mat, symmetry="symmetric")


def assemble_coupling(kind: str, coeff_field, ctx: AssemblyContext,
                      mesh: MeshTopology, dofmap: DofMap) -> SparseOperator:
    """State-dependent coupling matrix of the discrete system.

    Kinds and their inner products (i row, j column):
      Uq/Uf  <c x eps_j^U, eps_i^U>   skew, c in W
      Uh     <c eps_j^U, eps_i^U>     symmetric, c in Q
      Wh     <c eps_j^W, eps_i^W>     symmetric, c in Q
      Uu     <c . eps_j^U, eps_i^Q>   c a vector in U
      Wq     <eps_i^W, c eps_j^Q>     c in W
      Qw     <eps_j^W, eps_i^Q>       constant, no coefficient field
    """
    if kind not in COUPLING_KINDS:
        raise ValueError(f"unknown coupling kind {kind!r}")
    LUx, LUy = _u_halves(dofmap, ctx)
    w2 = ctx.w2

    if kind == "Qw":
        if coeff_field is not None:
            raise TypeError("Qw takes no coefficient field")
        block = np.einsum("q,qi,qj->ij", w2, ctx.BQ, ctx.BW, optimize=True)
        mat = _scatter(dofmap.LQ, dofmap.LW, block, (dofmap.dQ, dofmap.dW))
        return SparseOperator(matrix=mat, symmetry="none")

    coeffs = require_space(coeff_field, _COEFF_SPACE[kind], f"{kind} coefficient")

    if kind in ("Uq", "Uf"):
        c = eval_W(ctx, dofmap, coeffs)
        bxy = -np.einsum("eq,qi,qj->eij", w2 * c, ctx.BUx, ctx.BUy, optimize=True)
        mat = _scatter(LUx, LUy, bxy, (dofmap.dU, dofmap.dU))
        mat = mat + _scatter(LUy, LUx, -bxy.transpose(0, 2, 1), (dofmap.dU, dofmap.dU))
        return SparseOperator(matrix=mat, symmetry="skew")
    if kind == "Uh":
        c = eval_Q(ctx, dofmap, coeffs)
        bx = np.einsum("eq,qi,qj->eij", w2 * c, ctx.BUx, ctx.BUx, optimize=True)
        by = np.einsum("eq,qi,qj->eij", w2 * c, ctx.BUy, ctx.BUy, optimize=True)
        mat = _scatter(LUx, LUx, bx, (dofmap.dU, dofmap.dU))
        mat = mat + _scatter(LUy, LUy, by, (dofmap.dU, dofmap.dU))
        return SparseOperator(matrix=mat, symmetry="symmetric")
    if kind == "Wh":
        c = eval_Q(ctx, dofmap, coeffs)
        blocks = np.einsum("eq,qi,qj->eij", w2 * c, ctx.BW, ctx.BW, optimize=True)
        mat = _scatter(dofmap.LW, dofmap.LW, blocks, (dofmap.dW, dofmap.dW))
        return SparseOperator(matrix=mat, symmetry="symmetric")
    if kind == "Uu":
        ux, uy = eval_U(ctx, dofmap, coeffs)
        bx = np.einsum("eq,qi,qj->eij", w2 * ux, ctx.BQ, ctx.BUx, optimize=True)
        by = np.einsum("eq,qi,qj->eij", w2 * uy, ctx.BQ, ctx.BUy, optimize=True)
        mat = _scatter(dofmap.LQ, LUx, bx, (dofmap.dQ, dofmap.dU))
        mat = mat + _scatter(dofmap.LQ, LUy, by, (dofmap.dQ, dofmap.dU))
        return SparseOperator(matrix=mat, symmetry="none")
    # kind == "Wq"
    c = eval_W(ctx, dofmap, coeffs)
    blocks = np.einsum("eq,qi,qj->eij", w2 * c, ctx.BW, ctx.BQ, optimize=True)
    mat = _scatter(dofmap.LW, dofmap.LQ, blocks, (dofmap.dW, dofmap.dQ))
    return SparseOperator(matrix=mat, symmetry="none")


class FrozenPattern:
    """Precomputed sparsity for repeated assembly of one matrix shape.

    The (row, col) layout of the element blocks never changes between
    assemblies, so the COO-to-CSR sort and the duplicate reduction are done
    once; each assembly is then a gather plus a segmented sum, in a fixed
    element order regardless of how the blocks were produced.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape):
        nel, a = rows.shape
        b = cols.shape[1]
        r = np.broadcast_to(rows[:, :, None], (nel, a, b)).ravel()
        c = np.broadcast_to(cols[:, None, :], (nel, a, b)).ravel()
        order = np.lexsort((c, r))
        rs, cs = r[order], c[order]
        first = np.ones(len(rs), dtype=bool)
        first[1:] = (rs[1:] != rs[:-1]) | (cs[1:] != cs[:-1])
        starts = np.flatnonzero(first)
        counts = np.bincount(rs[starts], minlength=shape[0])
        self.shape = shape
        self._order = order
        self._starts = starts
        self._indices = cs[starts].astype(np.int32)
        self._indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)

    def assemble(self, blocks: np.ndarray) -> sp.csr_matrix:
        data = blocks.reshape(-1)[self._order]
        vals = np.add.reduceat(data, self._starts)
        return sp.csr_matrix((vals, self._indices, self._indptr), shape=self.shape)


# --- linear solves -----------------------------------------------------------

def solve_spd(A, b: np.ndarray, rtol: float = CG_RTOL,
              maxiter: int | None = None) -> np.ndarray:
    """Solve A x = b for SPD A with Jacobi-preconditioned conjugate gradients.

    Stops at relative residual ||Ax - b|| / ||b|| < rtol; raises
    ConvergenceError (carrying the final residual) past 10*dim iterations.
    """
    mat = A.matrix if isinstance(A, SparseOperator) else A
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    n = mat.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    inv_diag = 1.0 / mat.diagonal()
    x = np.zeros(n)
    r = b.copy()
    z = inv_diag * r
    d = z.copy()
    rz = r @ z
    tol = rtol * bnorm
    for _ in range(maxiter):
        if np.linalg.norm(r) < tol:
            true_res = np.linalg.norm(mat @ x - b)
            if true_res < tol:
                return x
            r = b - mat @ x  # recurrence drifted; restart from the true residual
            z = inv_diag * r
            d = z.copy()
            rz = r @ z
        Ad = mat @ d
        alpha = rz / (d @ Ad)
        x += alpha * d
        r -= alpha * Ad
        z = inv_diag * r
        rz_new = r @ z
        d = z + (rz_new / rz) * d
        rz = rz_new
    residual = np.linalg.norm(mat @ x - b) / bnorm
    raise ConvergenceError(
        f"CG did not reach rtol={rtol:g} within {maxiter} iterations", residual=residual)


# --- canonical (mimetic) projection ------------------------------------------

def _gauss_on_subintervals(edges: np.ndarray, npts: int):
    """Mapped Gauss points/weights on each [edges[i], edges[i+1]]."""
    gp, gw = np.polynomial.legendre.leggauss(npts)
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    pts = lo[:, None] + half[:, None] * (gp[None, :] + 1.0)
    wts = half[:, None] * gw[None, :]
    return pts, wts


def project_mimetic(space: str, func, ctx: AssemblyContext,
                    mesh: MeshTopology) -> Field:
    """Canonical DOFs of an analytic function: point values (W), edge flux
    integrals (U), or subcell integrals (Q).

    Scalar functions are callables f(x, y) -> array; U takes a vector
    callable f(x, y) -> (fx, fy).  Integral DOFs use a fixed high-order
    Gauss rule per subinterval.
    """
    xn = mesh.node_coords_1d("x")
    yn = mesh.node_coords_1d("y")
    xe = mesh.subcell_edges_1d("x")
    ye = mesh.subcell_edges_1d("y")
    if space == "W":
        vals = func(xn[:, None], yn[None, :])
        return Field("W", np.broadcast_to(vals, (len(xn), len(yn))).ravel())
    if space == "Q":
        px, wx = _gauss_on_subintervals(xe, PROJECTION_POINTS)
        py, wy = _gauss_on_subintervals(ye, PROJECTION_POINTS)
        vals = np.broadcast_to(func(px.ravel()[:, None], py.ravel()[None, :]),
                               (px.size, py.size))
        vals = vals.reshape(len(xn), PROJECTION_POINTS, len(yn), PROJECTION_POINTS)
        dofs = np.einsum("agbh,ag,bh->ab", vals, wx, wy, optimize=True)
        return Field("Q", dofs.ravel())
    if space == "U":
        py, wy = _gauss_on_subintervals(ye, PROJECTION_POINTS)
        fx, _ = func(xn[:, None], py.ravel()[None, :])
        fx = np.broadcast_to(fx, (len(xn), py.size)).reshape(len(xn), len(yn), -1)
        ux = np.einsum("abg,bg->ab", fx, wy, optimize=True)
        px, wx = _gauss_on_subintervals(xe, PROJECTION_POINTS)
        _, fy = func(px.ravel()[:, None], yn[None, :])
        fy = np.broadcast_to(fy, (px.size, len(yn))).reshape(len(xn), -1, len(yn))
        uy = np.einsum("agb,ag->ab", fy, wx, optimize=True)
        return Field("U", np.concatenate([ux.ravel(), uy.ravel()]))
    raise ValueError(f"unknown space {space!r}")


# --- point evaluation of discrete fields --------------------------------------

def _locate(mesh: MeshTopology, x, axis: str):
    """Map physical coordinates to (element index, reference coordinate)."""
    n = mesh.nx if axis == "x" else mesh.ny
    start = mesh.x0 if axis == "x" else mesh.y0
    width = mesh.dx if axis == "x" else mesh.dy
    t = (np.asarray(x, dtype=float) - start) / width
    e = np.floor(t).astype(np.int64) % n
    xi = 2.0 * (t - np.floor(t)) - 1.0
    return e, xi


def evaluate(field: Field, mesh: MeshTopology, dofmap: DofMap, x, y):
    """Evaluate the discrete expansion at arbitrary physical points.

    Periodic wrap-around convention: points on the right/top domain edge
    evaluate in the first element.  Returns an array for scalar spaces and
    an (ux, uy) pair for U.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape
    ex, xi = _locate(mesh, x.ravel(), "x")
    ey, eta = _locate(mesh, y.ravel(), "y")
    elems = ex * mesh.ny + ey
    basis = Basis1D.create(mesh.p)
    lx, ly = basis.nodal_values(xi), basis.nodal_values(eta)
    gx, gy = basis.edge_values(xi), basis.edge_values(eta)
    if field.space == "W":
        tab = np.einsum("pi,pj->pij", lx, ly).reshape(len(elems), -1)
        vals = np.einsum("pk,pk->p", field.data[dofmap.LW[elems]], tab)
        return vals.reshape(shape)
    if field.space == "Q":
        tab = np.einsum("pi,pj->pij", gx, gy).reshape(len(elems), -1)
        scale = 4.0 / (mesh.dx * mesh.dy)
        vals = scale * np.einsum("pk,pk->p", field.data[dofmap.LQ[elems]], tab)
        return vals.reshape(shape)
    if field.space == "U":
        h = mesh.p * (mesh.p + 1)
        tabx = np.einsum("pi,pj->pij", lx, gy).reshape(len(elems), -1)
        taby = np.einsum("pi,pj->pij", gx, ly).reshape(len(elems), -1)
        ux = (2.0 / mesh.dy) * np.einsum("pk,pk->p", field.data[dofmap.LU[elems, :h]], tabx)
        uy = (2.0 / mesh.dx) * np.einsum("pk,pk->p", field.data[dofmap.LU[elems, h:]], taby)
        return ux.reshape(shape), uy.reshape(shape)
    raise ValueError(f"unknown space {field.space!r}")
