"""Doubly periodic structured quad mesh, DOF numbering and incidence matrices.

Three discrete spaces live on the mesh:

* W — C0 tensor-product nodal space; DOFs are point values on the global
  GLL grid (corner/edge nodes shared between elements).
* U — normal-continuous flux space; DOFs are integrals of the normal
  velocity component over GLL-grid segments (x-normal DOFs sit on vertical
  segments, y-normal DOFs on horizontal ones).  All x-normal DOFs are
  numbered before all y-normal DOFs.
* Q — fully discontinuous volume space; DOFs are integrals over GLL
  subcells.

On the torus all three spaces have a structured global numbering over the
nx*p by ny*p grid of nodes/cells (x-major, y fastest).  The integer
incidence matrices E10 (dU x dW) and E21 (dQ x dU) apply the perpendicular
gradient (W -> U) and the divergence (U -> Q) directly to DOFs via the
fundamental theorem of calculus; E21 @ E10 == 0 encodes div(rot) == 0.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import gll_nodes


@dataclass(frozen=True)
class MeshTopology:
    """Uniform axis-aligned periodic rectangle mesh of nx*ny elements."""

    nx: int
    ny: int
    Lx: float
    Ly: float
    p: int
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("element counts must be >= 1")
        if self.Lx <= 0 or self.Ly <= 0:
            raise ValueError("domain lengths must be positive")
        if self.p < 1:
            raise ValueError("basis degree must be >= 1")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def n_elements(self) -> int:
        return self.nx * self.ny

    def node_coords_1d(self, axis: str) -> np.ndarray:
        """Distinct global GLL node coordinates along one axis (length n*p).

        The duplicate node at each element interface (and at the periodic
        seam) is dropped; appending origin+length gives the subcell
        boundaries.
        """
        nodes = gll_nodes(self.p)
        if axis == "x":
            n, width, start = self.nx, self.dx, self.x0
        else:
            n, width, start = self.ny, self.dy, self.y0
        offs = start + width * np.arange(n)
        local = 0.5 * (nodes[:-1] + 1.0) * width
        return (offs[:, None] + local[None, :]).ravel()

    def subcell_edges_1d(self, axis: str) -> np.ndarray:
        """Global subcell boundary coordinates (length n*p + 1)."""
        coords = self.node_coords_1d(axis)
        end = self.x0 + self.Lx if axis == "x" else self.y0 + self.Ly
        return np.concatenate([coords, [end]])


def local_indices(p: int):
    """Local DOF index grids for one element, matching the tensor layout.

    Returns (kW, kU, kV, kQ):
      kW[i, j]   nodal DOF at node (i, j),          i, j = 0..p
      kU[i, j]   x-normal flux DOF at x-node i, y-subcell j,  i = 0..p, j = 0..p-1
      kV[i, j]   y-normal flux DOF at x-subcell i, y-node j,  i = 0..p-1, j = 0..p
      kQ[i, j]   volume DOF at subcell (i, j),      i, j = 0..p-1
    x-normal DOFs occupy local U slots 0..p(p+1)-1, y-normal the rest.
    """
    kW = (np.arange(p + 1)[:, None] * (p + 1) + np.arange(p + 1)[None, :])
    kU = np.arange(p + 1)[:, None] * p + np.arange(p)[None, :]
    kV = p * (p + 1) + np.arange(p)[:, None] * (p + 1) + np.arange(p + 1)[None, :]
    kQ = np.arange(p)[:, None] * p + np.arange(p)[None, :]
    return kW, kU, kV, kQ


def local_patterns(p: int):
    """Single-element incidence matrices (E10: 2p(p+1) x (p+1)^2, E21: p^2 x 2p(p+1)).

    Built from the fundamental theorem of calculus: the flux DOF of the
    perpendicular gradient of a nodal function is a difference of two nodal
    values, and the volume DOF of the divergence of a flux function is the
    signed sum of the four boundary flux DOFs.
    """
    kW, kU, kV, kQ = local_indices(p)
    nW, nU, nQ = (p + 1) ** 2, 2 * p * (p + 1), p * p
    E10 = np.zeros((nU, nW), dtype=np.int64)
    E21 = np.zeros((nQ, nU), dtype=np.int64)
    for i in range(p + 1):
        for j in range(p):
            # x-normal DOF: integral of -d/dy over [y_j, y_j+1] at x-node i
            E10[kU[i, j], kW[i, j]] = 1
            E10[kU[i, j], kW[i, j + 1]] = -1
            # y-normal DOF: integral of +d/dx over [x_j, x_j+1] at y-node i
            E10[kV[j, i], kW[j + 1, i]] = 1
            E10[kV[j, i], kW[j, i]] = -1
    for i in range(p):
        for j in range(p):
            E21[kQ[i, j], kU[i + 1, j]] = 1
            E21[kQ[i, j], kU[i, j]] = -1
            E21[kQ[i, j], kV[i, j + 1]] = 1
            E21[kQ[i, j], kV[i, j]] = -1
    return E10, E21


@dataclass(frozen=True)
class DofMap:
    """Global DOF dimensions and per-element local-to-global index maps.

    LW/LU/LQ have shape (n_elements, local_dim); element e = mx*ny + my.
    """

    dW: int
    dU: int
    dQ: int
    LW: np.ndarray
    LU: np.ndarray
    LQ: np.ndarray


def build_dof_map(mesh: MeshTopology) -> DofMap:
    """Number the global DOFs of W, U and Q with periodic identification.

    Global layout (Nx = nx*p, Ny = ny*p, all x-major):
      W DOF (ix, iy)          -> ix*Ny + iy
      U x-normal (ix, jy)     -> ix*Ny + jy
      U y-normal (ixc, jy)    -> Nx*Ny + ixc*Ny + jy
      Q DOF (ixc, jyc)        -> ixc*Ny + jyc
    where ix/iy index nodes and ixc/jyc index subcells.
    """
    p = mesh.p
    Nx, Ny = mesh.nx * p, mesh.ny * p
    dW = dQ = Nx * Ny
    dU = 2 * Nx * Ny
    kW, kU, kV, kQ = local_indices(p)

    nel = mesh.n_elements
    LW = np.zeros((nel, (p + 1) ** 2), dtype=np.int64)
    LU = np.zeros((nel, 2 * p * (p + 1)), dtype=np.int64)
    LQ = np.zeros((nel, p * p), dtype=np.int64)

    node = np.arange(p + 1)  # local node offsets
    cell = np.arange(p)      # local subcell offsets
    for mx in range(mesh.nx):
        ixn = (mx * p + node) % Nx
        ixc = mx * p + cell
        for my in range(mesh.ny):
            e = mx * mesh.ny + my
            iyn = (my * p + node) % Ny
            iyc = my * p + cell
            LW[e, kW] = ixn[:, None] * Ny + iyn[None, :]
            LU[e, kU] = ixn[:, None] * Ny + iyc[None, :]
            LU[e, kV] = Nx * Ny + ixc[:, None] * Ny + iyn[None, :]
            LQ[e, kQ] = ixc[:, None] * Ny + iyc[None, :]
    return DofMap(dW=dW, dU=dU, dQ=dQ, LW=LW, LU=LU, LQ=LQ)


@dataclass(frozen=True)
class IncidenceMatrices:
    """Global integer incidence matrices on the periodic mesh."""

    E10: sp.csr_matrix  # dU x dW, rot: W -> U
    E21: sp.csr_matrix  # dQ x dU, div: U -> Q


def build_incidence(mesh: MeshTopology, dofmap: DofMap) -> IncidenceMatrices:
    """Assemble E10 and E21 with periodic shared-DOF identification.

    Each row is generated once from the global grid layout; on meshes that
    wrap onto themselves (nx == 1 or ny == 1) the +-1 entries of a row can
    land on the same column and cancel, which the duplicate-summing COO
    construction handles.
    """
    p = mesh.p
    Nx, Ny = mesh.nx * p, mesh.ny * p
    NW = Nx * Ny

    ix = np.repeat(np.arange(Nx), Ny)   # x-major enumeration of the grid
    jy = np.tile(np.arange(Ny), Nx)
    gw = lambda a, b: (a % Nx) * Ny + (b % Ny)

    # E10: x-normal rows ix*Ny+jy, then y-normal rows NW + ix*Ny+jy
    rows = np.concatenate([np.tile(ix * Ny + jy, 2), np.tile(NW + ix * Ny + jy, 2)])
    cols = np.concatenate([gw(ix, jy), gw(ix, jy + 1), gw(ix + 1, jy), gw(ix, jy)])
    vals = np.concatenate([np.ones(NW), -np.ones(NW), np.ones(NW), -np.ones(NW)])
    E10 = sp.coo_matrix((vals, (rows, cols)), shape=(dofmap.dU, dofmap.dW))
    E10 = sp.csr_matrix(E10, dtype=np.int64)
    E10.sum_duplicates()
    E10.eliminate_zeros()

    gux = lambda a, b: (a % Nx) * Ny + (b % Ny)
    guy = lambda a, b: NW + (a % Nx) * Ny + (b % Ny)
    rows = np.tile(ix * Ny + jy, 4)
    cols = np.concatenate([gux(ix + 1, jy), gux(ix, jy), guy(ix, jy + 1), guy(ix, jy)])
    vals = np.concatenate([np.ones(NW), -np.ones(NW), np.ones(NW), -np.ones(NW)])
    E21 = sp.coo_matrix((vals, (rows, cols)), shape=(dofmap.dQ, dofmap.dU))
    E21 = sp.csr_matrix(E21, dtype=np.int64)
    E21.sum_duplicates()
    E21.eliminate_zeros()
    return IncidenceMatrices(E10=E10, E21=E21)
