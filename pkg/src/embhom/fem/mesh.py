"""Uniform hexahedral grids and trilinear element matrices."""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..tensor import SQRT2

GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)
# local node a = ax + 2 ay + 4 az
LOCAL = np.array([[a & 1, (a >> 1) & 1, (a >> 2) & 1] for a in range(8)])


@lru_cache(maxsize=None)
def shape_gradients(h):
    """dN_a/dx at the 8 Gauss points of a cube of side h: shape (8, 8, 3)."""
    out = np.empty((8, 8, 3))
    pts = [(gx, gy, gz) for gz in GAUSS for gy in GAUSS for gx in GAUSS]
    for g, xi in enumerate(pts):
        for a in range(8):
            s = 2.0 * LOCAL[a] - 1.0
            f = 0.5 * (1.0 + s * np.array(xi))
            for d in range(3):
                prod = 0.5 * s[d]
                for e in range(3):
                    if e != d:
                        prod *= f[e]
                out[g, a, d] = prod * 2.0 / h
    return out


@lru_cache(maxsize=None)
def strain_matrices(h):
    """Mandel strain-displacement matrices at Gauss points: shape (8, 6, 24)."""
    G = shape_gradients(h)
    B = np.zeros((8, 6, 24))
    r = 1.0 / SQRT2
    for g in range(8):
        for a in range(8):
            dx, dy, dz = G[g, a]
            c = 3 * a
            B[g, 0, c] = dx
            B[g, 1, c + 1] = dy
            B[g, 2, c + 2] = dz
            B[g, 3, c + 1], B[g, 3, c + 2] = r * dz, r * dy
            B[g, 4, c], B[g, 4, c + 2] = r * dz, r * dx
            B[g, 5, c], B[g, 5, c + 1] = r * dy, r * dx
    return B


def gauss_weight(h):
    """Quadrature weight times Jacobian, identical for all 8 points."""
    return (h / 2.0) ** 3


def mean_strain_matrix(h):
    """Integral of B over one element: (6, 24)."""
    return strain_matrices(h).sum(axis=0) * gauss_weight(h)


def element_stiffness(D, h):
    """Stiffness matrices for a stack of Mandel tensors D (m, 6, 6): (m, 24, 24)."""
    B = strain_matrices(h)
    return np.einsum("gia,mij,gjb->mab", B, np.atleast_3d(D).reshape(-1, 6, 6), B) * gauss_weight(h)


def element_dofs(n, periodic=False):
    """Global dof indices (n^3, 24) for an n^3 element grid.

    Node (i, j, k) has id (i * m + j) * m + k, with m = n + 1 nodes per axis,
    or m = n and indices taken modulo n when periodic.
    """
    m = n if periodic else n + 1
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    nodes = np.empty((n**3, 8), dtype=np.int64)
    for a, (ax, ay, az) in enumerate(LOCAL):
        ii, jj, kk = i + ax, j + ay, k + az
        if periodic:
            ii, jj, kk = ii % n, jj % n, kk % n
        nodes[:, a] = (ii * m + jj) * m + kk
    return (3 * nodes[:, :, None] + np.arange(3)).reshape(n**3, 24)


@dataclass(frozen=True)
class TruncatedBoxMesh:
    """Uniform grid of nx^3 trilinear hexahedra on [-L, L]^3."""

    L: float
    nx: int

    def __post_init__(self):
        if self.L < 2:
            raise ValueError("truncation half-width L must be >= 2")
        if self.nx % 2:
            raise ValueError("nx must be even")
        if not _is_int((self.L - 1.0) / self.h):
            raise ValueError("the grid must have nodes on the planes x = +-1")

    @property
    def h(self):
        return 2.0 * self.L / self.nx

    @property
    def n_nodes(self):
        return (self.nx + 1) ** 3

    def element_centers(self):
        c = -self.L + (np.arange(self.nx) + 0.5) * self.h
        return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)

    def node_coords(self):
        c = -self.L + np.arange(self.nx + 1) * self.h
        return np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)

    def boundary_nodes(self):
        idx = np.arange(self.nx + 1)
        i, j, k = np.meshgrid(idx, idx, idx, indexing="ij")
        edge = (i == 0) | (i == self.nx) | (j == 0) | (j == self.nx) | (k == 0) | (k == self.nx)
        return edge.ravel()


def _is_int(x, tol=1e-9):
    return abs(x - round(x)) < tol


def voxel_lookup(centers, n):
    """Voxel index (i, j, k) of [-1, 1]^3 points and whether the point lies in the cube."""
    inside = np.all(np.abs(centers) < 1.0, axis=1)
    idx = np.clip(np.floor((centers + 1.0) * n / 2.0).astype(np.int64), 0, n - 1)
    return idx, inside


def check_alignment(mesh: TruncatedBoxMesh, n):
    """Element faces must coincide with voxel faces on [-1, 1]^3."""
    per_voxel = (2.0 / n) / mesh.h
    if not (_is_int(per_voxel) and round(per_voxel) >= 1):
        raise ValueError(
            f"mesh (L={mesh.L}, nx={mesh.nx}) does not resolve a {n}^3 voxel grid; "
            "nx must be a multiple of n * L"
        )
    return int(round(per_voxel))
