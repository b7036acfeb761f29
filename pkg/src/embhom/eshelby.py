"""Closed-form spherical Eshelby inclusion embedded in an isotropic matrix.

The corrector of a constant isotropic inclusion (moduli ``inclusion``) in an
infinite isotropic matrix (moduli ``matrix``) under loading sigma is linear
inside the unit ball, w(x) = C x, and a single-layer potential outside.
"""

from dataclasses import dataclass

import numpy as np

from .layer_potentials import (
    BoundaryField,
    SphereQuadrature,
    single_layer_apply,
    varphi_density,
)
from .tensor import IDENTITY, IsoModuli, basis_pairs, canonical_basis, from_mandel, trace


@dataclass(frozen=True)
class EshelbyConfig:
    inclusion: IsoModuli
    matrix: IsoModuli
    sigma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=float).reshape(6))


@dataclass(frozen=True)
class EshelbySolution:
    interior_matrix: np.ndarray  # Mandel vector of C
    exterior_density: BoundaryField


def _shear_denominator(inc, mat):
    mu0, lam, mu = inc.mu, mat.lam, mat.mu
    return 2 * mu0 + (14 * mu + 9 * lam) / (8 * mu + 3 * lam) * mu


def basis_interior_matrix(inc: IsoModuli, mat: IsoModuli, k, l):
    """Mandel vector of C^{kl} for the basis load sigma^{kl}."""
    mu0, lam0 = inc.mu, inc.lam
    mu, lam = mat.mu, mat.lam
    s = canonical_basis(k, l)
    den = _shear_denominator(inc, mat)
    shear = 2 * (mu - mu0) / den
    if k != l:
        return shear * s
    bulk = ((lam - lam0) - 2 * (mu - mu0) * (lam0 + (6 * mu + lam) / (8 * mu + 3 * lam) * mu) / den) / (
        2 * mu0 + 3 * lam0 + 4 * mu
    )
    return bulk * IDENTITY + shear * s


def identity_interior_matrix(inc: IsoModuli, mat: IsoModuli):
    """C for sigma = Id, from the corollary's one-line formula."""
    c = (2 * (mat.mu - inc.mu) + 3 * (mat.lam - inc.lam)) / (2 * inc.mu + 3 * inc.lam + 4 * mat.mu)
    return c * IDENTITY


def _basis_coefficients(sigma):
    # sigma = sum_{k<=l} c_kl sigma^{kl}; off-diagonal basis entries carry 1/2
    s33 = from_mandel(sigma)
    return [(k, l, s33[k - 1, l - 1] * (1.0 if k == l else 2.0)) for k, l in basis_pairs()]


def interior_matrix(cfg: EshelbyConfig):
    """Mandel vector of C such that w(x) = C x inside the ball; linear in sigma."""
    c = np.zeros(6)
    for k, l, coef in _basis_coefficients(cfg.sigma):
        if coef != 0.0:
            c += coef * basis_interior_matrix(cfg.inclusion, cfg.matrix, k, l)
    return c


def solve(cfg: EshelbyConfig) -> EshelbySolution:
    C = interior_matrix(cfg)
    return EshelbySolution(C, varphi_density(cfg.matrix, C))


def displacement(cfg: EshelbyConfig, sol: EshelbySolution, x, quad: SphereQuadrature = None):
    """w(x): C x in the closed ball, single-layer potential of varphi_C outside."""
    quad = quad or SphereQuadrature()
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x)
    C = from_mandel(sol.interior_matrix)
    out = pts @ C.T
    outside = np.linalg.norm(pts, axis=1) > 1.0 + 1e-10
    if outside.any():
        out[outside] = single_layer_apply(cfg.matrix, sol.exterior_density, quad, pts[outside])
    return out[0] if x.ndim == 1 else out


def _check_on_sphere(x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if np.abs(np.linalg.norm(x, axis=1) - 1.0).max() > 1e-10:
        raise ValueError("traction is only defined on the unit sphere")
    return x


def interior_traction(cfg: EshelbyConfig, sol: EshelbySolution, x):
    x = _check_on_sphere(x)
    C = from_mandel(sol.interior_matrix)
    inc = cfg.inclusion
    return x @ (2 * inc.mu * C + inc.lam * np.trace(C) * np.eye(3)).T


def exterior_traction(cfg: EshelbyConfig, sol: EshelbySolution, x):
    """Exterior normal stress of the corrector, via the D* spectrum."""
    x = _check_on_sphere(x)
    C = from_mandel(sol.interior_matrix)
    lam, mu = cfg.matrix.lam, cfg.matrix.mu
    a = (14 * mu + 9 * lam) / (8 * mu + 3 * lam) * mu
    b = (6 * mu + lam) / (8 * mu + 3 * lam) * mu
    return -x @ (a * C + b * np.trace(C) * np.eye(3)).T


def traction_jump(cfg: EshelbyConfig, sol: EshelbySolution, x):
    """Interior minus exterior normal stress of the corrector at sphere point(s)."""
    x = np.asarray(x, dtype=float)
    jump = interior_traction(cfg, sol, x) - exterior_traction(cfg, sol, x)
    return jump[0] if x.ndim == 1 else jump


def traction_jump_target(cfg: EshelbyConfig, x):
    """The jump the transmission condition requires: (2(mu-mu0) sigma + (lam-lam0) tr(sigma) Id) x."""
    x = _check_on_sphere(x)
    s = from_mandel(cfg.sigma)
    inc, mat = cfg.inclusion, cfg.matrix
    M = 2 * (mat.mu - inc.mu) * s + (mat.lam - inc.lam) * np.trace(s) * np.eye(3)
    out = x @ M.T
    return out[0] if np.ndim(x) == 1 else out


def energy(cfg: EshelbyConfig):
    """E_sigma^{A0}(A) = 2mu0 s.(s+C) + lam0 tr(s+C) tr(s) - 2mu tr(C s) - lam tr(s) tr(C)."""
    s = cfg.sigma
    C = interior_matrix(cfg)
    inc, mat = cfg.inclusion, cfg.matrix
    return float(
        2 * inc.mu * s @ (s + C)
        + inc.lam * trace(s + C) * trace(s)
        - 2 * mat.mu * (C @ s)
        - mat.lam * trace(s) * trace(C)
    )


def flux(cfg: EshelbyConfig):
    """Mean stress over the ball, A0 (sigma + C), as a Mandel vector."""
    v = cfg.sigma + interior_matrix(cfg)
    inc = cfg.inclusion
    return 2 * inc.mu * v + inc.lam * trace(v) * IDENTITY


# Independent closed forms, kept as cross-checks of energy().


def energy_shear(inc: IsoModuli, mat: IsoModuli):
    """E for sigma^{kl}, k != l."""
    return inc.mu - 2 * (mat.mu - inc.mu) ** 2 / _shear_denominator(inc, mat)


def energy_diagonal(inc: IsoModuli, mat: IsoModuli):
    """E for sigma^{kk}."""
    mu0, lam0, mu, lam = inc.mu, inc.lam, mat.mu, mat.lam
    den = _shear_denominator(inc, mat)
    bulk = ((lam - lam0) - 2 * (mu - mu0) * (lam0 + (6 * mu + lam) / (8 * mu + 3 * lam) * mu) / den) / (
        2 * mu0 + 3 * lam0 + 4 * mu
    )
    return (
        2 * mu0
        + lam0
        + (2 * (mu0 - mu) + 3 * (lam0 - lam)) * bulk
        + (2 * (mu0 - mu) + (lam0 - lam)) * 2 * (mu - mu0) / den
    )


def energy_bulk(inc: IsoModuli, mat: IsoModuli):
    """E for sigma = Id, from the Lame form."""
    mu0, lam0, mu, lam = inc.mu, inc.lam, mat.mu, mat.lam
    return 3 * (
        2 * mu0 + 3 * lam0 - (2 * (mu0 - mu) + 3 * (lam0 - lam)) ** 2 / (2 * mu0 + 3 * lam0 + 4 * mu)
    )


def energy_bulk_kappa_mu(inc: IsoModuli, mat: IsoModuli):
    """E for sigma = Id, from the (kappa, mu) form."""
    return 3 * (inc.kappa - (inc.kappa - mat.kappa) ** 2 / (inc.kappa + 4 * mat.mu))
