"""Elastic single-layer potential on the unit sphere.

Provides the Kelvin Green function, quadrature of the single-layer potential
(including the weakly singular on-sphere case), the closed-form spectra of the
single-layer and adjoint double-layer boundary operators on vector spherical
harmonics, and the special boundary fields Z0, Zi, Zij, Rij.
"""

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import IsoModuli, from_mandel


class QuadratureAccuracyWarning(UserWarning):
    """Evaluation point too close to the sphere for the regular quadrature."""


# exterior/interior points closer than this to the sphere use upsampled nodes
NEAR_SPHERE = 0.05
ON_SPHERE_TOL = 1e-10


@dataclass(frozen=True)
class SphereQuadrature:
    """Product rule on the unit sphere: Gauss-Legendre in cos(theta) x trapezoid in phi.

    Exact for spherical polynomials of total degree <= ``degree``.
    """

    n_theta: int = 32
    n_phi: int = 64
    nodes: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        t, wt = np.polynomial.legendre.leggauss(self.n_theta)
        phi = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        st = np.sqrt(1.0 - t**2)
        nodes = np.stack(
            [
                np.outer(st, np.cos(phi)).ravel(),
                np.outer(st, np.sin(phi)).ravel(),
                np.repeat(t, self.n_phi),
            ],
            axis=1,
        )
        weights = np.repeat(wt, self.n_phi) * (2.0 * np.pi / self.n_phi)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)
        self._validate()

    @property
    def degree(self):
        return min(2 * self.n_theta - 1, self.n_phi - 1)

    def _validate(self):
        # analytic moments of x^a y^b z^c over the sphere for small degrees
        x, y, z = self.nodes.T
        w = self.weights
        checks = [(np.ones_like(x), 4 * np.pi)]
        if self.degree >= 2:
            checks += [(x**2, 4 * np.pi / 3), (x * y, 0.0)]
        if self.degree >= 4:
            checks += [(z**4, 4 * np.pi / 5), (x**2 * y**2, 4 * np.pi / 15)]
        for f, exact in checks:
            if abs(w @ f - exact) > 1e-12 * 4 * np.pi:
                raise ValueError("sphere quadrature failed its moment check")

    def upsampled(self, factor=2):
        return SphereQuadrature(self.n_theta * factor, self.n_phi * factor)

    def integrate(self, f):
        """Integrate ``f(nodes) -> (n,)`` or ``(n, k)`` over the sphere."""
        return np.tensordot(self.weights, f(self.nodes), axes=(0, 0))


def _polar_rule(n_theta, n_phi):
    """Gauss-Legendre in theta on [0, pi] (weights include sin theta) x trapezoid in phi.

    Centered on the north pole; rotating it onto an evaluation point x makes
    sin(theta)/|x - y| = cos(theta/2), which cancels the kernel singularity.
    """
    t, wt = np.polynomial.legendre.leggauss(n_theta)
    theta = 0.5 * np.pi * (t + 1.0)
    wtheta = 0.5 * np.pi * wt * np.sin(theta)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    st, ct = np.sin(theta), np.cos(theta)
    local = np.stack(
        [np.outer(st, np.cos(phi)).ravel(), np.outer(st, np.sin(phi)).ravel(), np.repeat(ct, n_phi)],
        axis=1,
    )
    return local, np.repeat(wtheta, n_phi) * (2.0 * np.pi / n_phi)


def _frame(x):
    """Orthonormal matrix whose third column is the unit vector x."""
    x = x / np.linalg.norm(x)
    helper = np.array([1.0, 0.0, 0.0]) if abs(x[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    t1 = np.cross(x, helper)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(x, t1)
    return np.stack([t1, t2, x], axis=1)


def green_function(m: IsoModuli, x, y):
    """Kelvin fundamental solution G(x, y) of -div(2 mu e(u) + lambda tr e(u) Id)."""
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.linalg.norm(d)
    if r == 0.0:
        raise ValueError("Green function is singular at x = y")
    lam, mu = m.lam, m.mu
    a = (lam + 3 * mu) / (lam + 2 * mu)
    b = (lam + mu) / (lam + 2 * mu)
    return (a * np.eye(3) + b * np.outer(d, d) / r**2) / (8 * np.pi * mu * r)


def _green_apply(m, d, phi):
    """Sum-ready G(x, y) phi(y) for displacement vectors d = x - y, shape (..., 3)."""
    lam, mu = m.lam, m.mu
    a = (lam + 3 * mu) / (lam + 2 * mu)
    b = (lam + mu) / (lam + 2 * mu)
    r2 = np.einsum("...i,...i->...", d, d)
    r = np.sqrt(r2)
    dphi = np.einsum("...i,...i->...", d, phi)
    return (a * phi + b * d * (dphi / r2)[..., None]) / (8 * np.pi * mu * r)[..., None]


@dataclass(frozen=True)
class BoundaryField:
    """A vector field on the unit sphere, evaluated on (n, 3) point arrays."""

    evaluator: Callable[[np.ndarray], np.ndarray]
    label: str = "custom"

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            return self.evaluator(pts[None, :])[0]
        return self.evaluator(pts)

    def __add__(self, other):
        return BoundaryField(lambda p: self.evaluator(p) + other.evaluator(p))

    def __rmul__(self, c):
        return BoundaryField(lambda p: c * self.evaluator(p))

    def __mul__(self, c):
        return self.__rmul__(c)


def linear_field(M, label="custom"):
    """Boundary field x -> M x."""
    M = np.array(M, dtype=float)
    return BoundaryField(lambda p: p @ M.T, label)


def _unit(i):
    e = np.zeros(3)
    e[i - 1] = 1.0
    return e


def z0():
    return linear_field(np.eye(3), "Z0")


def zi(i):
    """x_i e_i - x / 3."""
    M = np.outer(_unit(i), _unit(i)) - np.eye(3) / 3.0
    return linear_field(M, f"Z{i}")


def zij(i, j):
    """x_i e_j - x_j e_i."""
    if i == j:
        raise ValueError("Zij needs i != j")
    M = np.outer(_unit(j), _unit(i)) - np.outer(_unit(i), _unit(j))
    return linear_field(M, f"Z{i}{j}")


def rij(i, j):
    """x_i e_j + x_j e_i."""
    if i == j:
        raise ValueError("Rij needs i != j")
    M = np.outer(_unit(j), _unit(i)) + np.outer(_unit(i), _unit(j))
    return linear_field(M, f"R{i}{j}")


def single_layer_apply(m: IsoModuli, density: BoundaryField, quad: SphereQuadrature, x):
    """Quadrature approximation of the single-layer potential at point(s) x.

    Points on the sphere use a polar rule rotated onto each point, which removes
    the 1/|x - y| singularity. Points within ``NEAR_SPHERE`` of the sphere use the
    same rotated rule with 4x the nodes and emit a
    :class:`QuadratureAccuracyWarning`.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    out = np.empty_like(pts)
    radii = np.linalg.norm(pts, axis=1)
    on = np.abs(radii - 1.0) <= ON_SPHERE_TOL
    near = ~on & (np.abs(radii - 1.0) < NEAR_SPHERE)
    far = ~on & ~near

    if far.any():
        y, w = quad.nodes, quad.weights
        phi = density(y)
        d = pts[far][:, None, :] - y[None, :, :]
        out[far] = np.einsum("j,kji->ki", w, _green_apply(m, d, phi[None]))
    if near.any():
        warnings.warn(
            "single-layer evaluation within %.2f of the sphere; using upsampled polar quadrature" % NEAR_SPHERE,
            QuadratureAccuracyWarning,
            stacklevel=2,
        )
        local, w = _polar_rule(2 * quad.n_theta, 2 * quad.n_phi)
        for k in np.flatnonzero(near):
            y = local @ _frame(pts[k]).T
            out[k] = w @ _green_apply(m, pts[k][None, :] - y, density(y))
    if on.any():
        local, w = _polar_rule(quad.n_theta, quad.n_phi)
        for k in np.flatnonzero(on):
            xk = pts[k] / radii[k]
            y = local @ _frame(xk).T
            d = xk[None, :] - y
            out[k] = w @ _green_apply(m, d, density(y))
    return out[0] if single else out


@dataclass(frozen=True)
class HarmonicIndex:
    kind: str
    l: int
    m: int = 0

    def __post_init__(self):
        if self.kind not in ("V", "W", "X"):
            raise ValueError(f"unknown harmonic kind {self.kind!r}")
        if self.l < 0 or abs(self.m) > self.l:
            raise ValueError(f"invalid harmonic index l={self.l}, m={self.m}")
        if self.kind == "X" and self.l < 1:
            raise ValueError("X harmonics need l >= 1")


def single_layer_eigenvalue(idx: HarmonicIndex, m: IsoModuli):
    lam, mu, l = m.lam, m.mu, idx.l
    if idx.kind == "V":
        return ((3 * l + 1) * mu + l * lam) / ((2 * l + 3) * (2 * l + 1) * mu * (2 * mu + lam))
    if idx.kind == "W":
        return ((3 * l + 2) * mu + (l + 1) * lam) / ((2 * l - 1) * (2 * l + 1) * mu * (2 * mu + lam))
    return 1.0 / (mu * (2 * l + 1))


def dstar_eigenvalue(idx: HarmonicIndex, m: IsoModuli):
    lam, mu, l = m.lam, m.mu, idx.l
    if idx.kind == "V":
        return -(2 * (2 * l**2 + 6 * l + 1) * mu - 3 * lam) / (2 * (2 * l + 1) * (2 * l + 3) * (2 * mu + lam))
    if idx.kind == "W":
        return (2 * (2 * l**2 - 2 * l - 3) * mu - 3 * lam) / (2 * (2 * l + 1) * (2 * l - 1) * (2 * mu + lam))
    return 1.0 / (2 * mu * (2 * l + 1))


# harmonic class of each labeled field
FIELD_HARMONIC = {"Z0": HarmonicIndex("V", 0), "Zij": HarmonicIndex("X", 1), "Rij": HarmonicIndex("W", 2)}


def table_eigenvalues(m: IsoModuli):
    """Single-layer and D* eigenvalues of Z0, Zij and (Rij, Zi)."""
    lam, mu = m.lam, m.mu
    return {
        "Z0": (1 / (3 * (2 * mu + lam)), (-2 * mu + 3 * lam) / (6 * (2 * mu + lam))),
        "Zij": (1 / (3 * mu), 1 / (6 * mu)),
        "Rij": ((8 * mu + 3 * lam) / (15 * mu * (2 * mu + lam)), (2 * mu - 3 * lam) / (30 * (2 * mu + lam))),
    }


def _as_matrix(C):
    C = np.asarray(C, dtype=float)
    return from_mandel(C) if C.shape == (6,) else C


def varphi_matrix(m: IsoModuli, C):
    """Matrix P with varphi_C(x) = P x."""
    C = _as_matrix(C)
    lam, mu = m.lam, m.mu
    den = 8 * mu + 3 * lam
    return 15 * mu * (2 * mu + lam) / den * C + 3 * (mu + lam) * (2 * mu + lam) / den * np.trace(C) * np.eye(3)


def varphi_density(m: IsoModuli, C):
    """Density whose single-layer trace on the sphere is x -> C x (C symmetric)."""
    C = _as_matrix(C)
    if not np.allclose(C, C.T):
        raise ValueError("C must be symmetric")
    return linear_field(varphi_matrix(m, C), "varphi")


def psi_density(m: IsoModuli, S):
    """Density 3 mu S x whose single-layer trace is x -> S x (S skew)."""
    S = np.asarray(S, dtype=float)
    if not np.allclose(S, -S.T):
        raise ValueError("S must be skew-symmetric")
    return linear_field(3.0 * m.mu * S, "psi")


def p_tilde(C):
    """Off-diagonal part x -> sum_{i != j} C_ij x_j e_i."""
    C = _as_matrix(C)
    return linear_field(C - np.diag(np.diag(C)), "p_tilde")


def p_hat_z(C):
    """sum_i C_ii Z_i."""
    C = _as_matrix(C)
    M = np.diag(np.diag(C)) - np.trace(C) / 3.0 * np.eye(3)
    return linear_field(M, "p_hat_Z")
