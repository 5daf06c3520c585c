"""Finite-element discretization of H = -laplacian/2 with Dirichlet walls.

Lagrange elements of order 1 (vertex dofs) or 2 (vertex + edge-midpoint dofs)
on straight triangles.  The generalized problem K x = E M x then yields the
billiard energies directly: the factor 1/2 of the Hamiltonian is folded into
the stiffness matrix.  Quadrature rules are exact for the polynomial
integrands of the chosen order, so assembly introduces no integration error.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import AssemblyError, ValidationError
from .geometry import Mesh


# symmetric triangle rules in barycentric coordinates; weights sum to 1/2
_MIDPOINT_RULE = (
    np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    np.full(3, 1.0 / 6.0),
)  # degree 2

_DUNAVANT4_RULE = (
    np.array([
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
    ]),
    0.5 * np.array([0.223381589678011] * 3 + [0.109951743655322] * 3),
)  # degree 4


def shape_p1(bary: np.ndarray):
    """P1 shape values and barycentric-gradient rows at given points."""
    n = bary.copy()
    d2 = np.tile(np.array([-1.0, 1.0, 0.0]), (len(bary), 1))
    d3 = np.tile(np.array([-1.0, 0.0, 1.0]), (len(bary), 1))
    return n, d2, d3


def shape_p2(bary: np.ndarray):
    """P2 shape values and gradients w.r.t. (L2, L3), with L1 = 1 - L2 - L3.

    Node order: three vertices, then midpoints of edges (0,1), (1,2), (2,0).
    """
    l1, l2, l3 = bary[:, 0], bary[:, 1], bary[:, 2]
    zeros = np.zeros_like(l1)
    n = np.column_stack([
        l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), l3 * (2 * l3 - 1),
        4 * l1 * l2, 4 * l2 * l3, 4 * l3 * l1,
    ])
    d2 = np.column_stack([
        1 - 4 * l1, 4 * l2 - 1, zeros,
        4 * (l1 - l2), 4 * l3, -4 * l3,
    ])
    d3 = np.column_stack([
        1 - 4 * l1, zeros, 4 * l3 - 1,
        -4 * l2, 4 * l2, 4 * (l1 - l3),
    ])
    return n, d2, d3


@dataclass
class SparseSymMatrix:
    """Symmetric sparse matrix stored as its upper triangle (row <= col)."""

    dim: int
    upper: sparse.csr_matrix

    @classmethod
    def from_full(cls, a: sparse.spmatrix) -> "SparseSymMatrix":
        a = a.tocsr()
        return cls(a.shape[0], sparse.triu(a, format="csr"))

    def full(self) -> sparse.csr_matrix:
        u = self.upper
        d = sparse.diags(u.diagonal())
        return (u + u.T - d).tocsr()

    @property
    def nnz_upper(self) -> int:
        return self.upper.nnz

    def coo_entries(self):
        """(rows, cols, values) of the upper triangle, deduplicated."""
        c = self.upper.tocoo()
        return c.row, c.col, c.data


@dataclass
class FemSystem:
    """Assembled Dirichlet system on the interior degrees of freedom.

    stiffness includes the 1/2 of H = -laplacian/2; mass carries the volume
    weights.  `interior` maps interior-dof index -> full-dof index, where
    full dofs are mesh vertices followed by edge midpoints (order 2 only).
    `dof_points` holds the coordinates of all full dofs.
    """

    stiffness: SparseSymMatrix
    mass: SparseSymMatrix
    interior: np.ndarray
    order: int
    n_full: int
    dof_points: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.stiffness.dim)


def _edge_table(triangles: np.ndarray):
    e = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    es = np.sort(e, axis=1)
    eu, inverse, counts = np.unique(es, axis=0, return_inverse=True, return_counts=True)
    edge_of_tri = inverse.reshape(3, len(triangles)).T
    return eu, edge_of_tri, counts


def assemble(mesh: Mesh, order: int = 2) -> FemSystem:
    """Assemble stiffness and mass matrices, eliminating boundary dofs."""
    if order not in (1, 2):
        raise ValidationError(f"unsupported element order {order}")
    verts = mesh.vertices
    tris = mesh.triangles
    nv = len(verts)
    nt = len(tris)

    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    j11 = p1[:, 0] - p0[:, 0]
    j12 = p2[:, 0] - p0[:, 0]
    j21 = p1[:, 1] - p0[:, 1]
    j22 = p2[:, 1] - p0[:, 1]
    det = j11 * j22 - j12 * j21
    bad = np.abs(det) < 1e-14
    if bad.any():
        raise AssemblyError(f"degenerate triangle {int(np.argmax(bad))}",
                            triangle=int(np.argmax(bad)))
    # rows of inverse-transpose Jacobian
    it11 = j22 / det
    it12 = -j21 / det
    it21 = -j12 / det
    it22 = j11 / det

    if order == 1:
        bary, weights = _MIDPOINT_RULE
        nfun, d2, d3 = shape_p1(bary)
        dofs = tris
        n_full = nv
        dof_flags = mesh.boundary.copy()
        dof_points = verts
    else:
        bary, weights = _DUNAVANT4_RULE
        nfun, d2, d3 = shape_p2(bary)
        edges, edge_of_tri, counts = _edge_table(tris)
        ne = len(edges)
        dofs = np.column_stack([tris, nv + edge_of_tri])
        n_full = nv + ne
        dof_flags = np.concatenate([mesh.boundary, np.zeros(ne, dtype=bool)])
        dof_flags[nv:][counts == 1] = True
        dof_points = np.vstack([verts, 0.5 * (verts[edges[:, 0]] + verts[edges[:, 1]])])

    nloc = dofs.shape[1]
    ke = np.zeros((nt, nloc, nloc))
    me = np.zeros((nt, nloc, nloc))
    absdet = np.abs(det)
    for q in range(len(weights)):
        gx = it11[:, None] * d2[q][None, :] + it12[:, None] * d3[q][None, :]
        gy = it21[:, None] * d2[q][None, :] + it22[:, None] * d3[q][None, :]
        ke += weights[q] * (gx[:, :, None] * gx[:, None, :]
                            + gy[:, :, None] * gy[:, None, :]) * absdet[:, None, None]
        me += weights[q] * (nfun[q][None, :, None] * nfun[q][None, None, :]) * absdet[:, None, None]
    ke *= 0.5  # H = -laplacian/2

    rows = np.repeat(dofs, nloc, axis=1).ravel()
    cols = np.tile(dofs, (1, nloc)).ravel()
    kfull = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n_full, n_full)).tocsr()
    mfull = sparse.coo_matrix((me.ravel(), (rows, cols)), shape=(n_full, n_full)).tocsr()

    interior = np.where(~dof_flags)[0]
    sel = np.ix_(interior, interior)
    return FemSystem(
        stiffness=SparseSymMatrix.from_full(kfull[sel]),
        mass=SparseSymMatrix.from_full(mfull[sel]),
        interior=interior,
        order=order,
        n_full=n_full,
        dof_points=dof_points,
    )


def element_matrices(mesh: Mesh, order: int = 2):
    """Per-triangle element stiffness/mass blocks (diagnostics and tests)."""
    verts, tris = mesh.vertices, mesh.triangles
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    j11 = p1[:, 0] - p0[:, 0]
    j12 = p2[:, 0] - p0[:, 0]
    j21 = p1[:, 1] - p0[:, 1]
    j22 = p2[:, 1] - p0[:, 1]
    det = j11 * j22 - j12 * j21
    it11, it12 = j22 / det, -j21 / det
    it21, it22 = -j12 / det, j11 / det
    if order == 1:
        bary, weights = _MIDPOINT_RULE
        nfun, d2, d3 = shape_p1(bary)
        nloc = 3
    else:
        bary, weights = _DUNAVANT4_RULE
        nfun, d2, d3 = shape_p2(bary)
        nloc = 6
    nt = len(tris)
    ke = np.zeros((nt, nloc, nloc))
    me = np.zeros((nt, nloc, nloc))
    for q in range(len(weights)):
        gx = it11[:, None] * d2[q][None, :] + it12[:, None] * d3[q][None, :]
        gy = it21[:, None] * d2[q][None, :] + it22[:, None] * d3[q][None, :]
        ke += weights[q] * (gx[:, :, None] * gx[:, None, :]
                            + gy[:, :, None] * gy[:, None, :]) * np.abs(det)[:, None, None]
        me += weights[q] * (nfun[q][None, :, None] * nfun[q][None, None, :]) * np.abs(det)[:, None, None]
    return 0.5 * ke, me


def write_matrix(path: str | Path, matrix: SparseSymMatrix) -> None:
    """Coordinate text export: `row col value`, 17 significant digits."""
    rows, cols, vals = matrix.coo_entries()
    with Path(path).open("w") as fh:
        for r, c, v in zip(rows, cols, vals):
            fh.write(f"{r} {c} {v:.17g}\n")
