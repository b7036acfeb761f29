"""Concavity of isotropic embedded energies in the (kappa, mu) coordinates.

Closed forms for the second derivatives of the Eshelby energies, the
discriminant witness showing the shear part is strictly concave, the affine
segment showing the bulk energy is not jointly strictly concave, and a
numerical probe usable with any energy oracle.
"""

from dataclasses import dataclass

import numpy as np

from .tensor import DomainError, IsoModuli


@dataclass(frozen=True)
class ConcavityWitness:
    gamma0: float
    gamma1: float
    gamma2: float
    c0: float
    c1: float
    c2: float
    discriminant: float
    F_at_mu0: float


def _positive(*vals):
    if not all(v > 0 for v in vals):
        raise DomainError(f"arguments must be positive, got {vals}")


def shear_penalty(mu0, kappa, mu):
    """f(mu) such that the shear energy of an iso(kappa0, mu0) ball equals mu0 - f(mu)."""
    return 2 * (mu - mu0) ** 2 * (6 * mu + kappa) / (2 * mu0 * (6 * mu + kappa) + (8 * mu + 3 * kappa) * mu)


def witness(mu0, kappa, mu) -> ConcavityWitness:
    _positive(mu0, kappa, mu)
    g0 = 2 * mu0 * (6 * mu + kappa) + (8 * mu + 3 * kappa) * mu
    g1 = 12 * mu0 + 16 * mu + 3 * kappa
    g2 = 6 * mu + kappa
    c2 = 4 * (-6 * g0 * g1 - 8 * g0 * g2 + g1**2 * g2)
    c1 = 48 * g0**2 - 8 * g0 * g1 * g2
    c0 = 4 * g0**2 * g2
    return ConcavityWitness(g0, g1, g2, c0, c1, c2, c1**2 - 4 * c2 * c0, c0)


def shear_energy_second_derivative(mu0, kappa, mu):
    """Return (f''(mu), witness) with f'' = F(mu) / gamma0^3, F quadratic in mu - mu0."""
    w = witness(mu0, kappa, mu)
    d = mu - mu0
    F = w.c2 * d**2 + w.c1 * d + w.c0
    return F / w.gamma0**3, w


def bulk_energy_second_derivative(kappa0, mu, kappa):
    """d^2/dkappa^2 of kappa0 - (kappa0 - kappa)^2 / (kappa0 + 4 mu)."""
    _positive(kappa0, mu, kappa)
    return -2.0 / (kappa0 + 4 * mu)


def bulk_energy_third(kappa0, mu, kappa):
    """(1/3) E_Id for an iso(kappa0, .) ball in an iso(kappa, mu) matrix."""
    return kappa0 - (kappa0 - kappa) ** 2 / (kappa0 + 4 * mu)


@dataclass
class AffineSegment:
    t: np.ndarray
    f: np.ndarray
    slope: float
    intercept: float
    kappa: np.ndarray
    mu: np.ndarray


def affine_counterexample(alpha, beta, samples=11) -> AffineSegment:
    """Segment in the isotropic class along which the bulk energy is affine.

    Requires beta >= 5 alpha / 2 so that mu = 5 alpha / 4 stays in the band.
    """
    if beta < 2.5 * alpha:
        raise ValueError("the affine segment needs beta >= 5 alpha / 2")
    t = np.linspace(0.0, 1.0, samples)
    kappa = t * beta + (1 - t) * (alpha + beta) / 2
    mu = t * 5 * alpha / 4 + (1 - t) * alpha / 2
    f = bulk_energy_third(alpha, mu, kappa)
    slope, intercept = np.polyfit(t, f, 1)
    return AffineSegment(t, f, float(slope), float(intercept), kappa, mu)


def affine_closed_form(alpha, beta, t):
    return alpha - (alpha - beta) ** 2 * (1 + np.asarray(t)) / (12 * alpha)


@dataclass
class ConcavityReport:
    t: np.ndarray
    energies: np.ndarray
    max_violation: float  # largest f(mid) shortfall below the chord; <= 0 means concave
    second_differences: np.ndarray


def energy_concavity_probe(oracle, A0, A1, sigma, samples=9) -> ConcavityReport:
    """Sample E_sigma along the segment (1-t) A0 + t A1 and measure midpoint concavity.

    Points are Chebyshev-spaced on [0, 1]; midpoint checks use every
    consecutive triple with the chord interpolated at the middle abscissa.
    """
    k = np.arange(samples)
    t = np.sort(0.5 * (1 - np.cos(np.pi * k / (samples - 1))))
    A0 = np.asarray(A0)
    A1 = np.asarray(A1)
    e = np.array([oracle((1 - s) * A0 + s * A1, sigma) for s in t])
    viol = []
    d2 = []
    for i in range(1, samples - 1):
        ta, tb, tc = t[i - 1], t[i], t[i + 1]
        chord = e[i - 1] + (e[i + 1] - e[i - 1]) * (tb - ta) / (tc - ta)
        viol.append(chord - e[i])
        # divided second difference
        d2.append(2 * ((e[i + 1] - e[i]) / (tc - tb) - (e[i] - e[i - 1]) / (tb - ta)) / (tc - ta))
    return ConcavityReport(t, e, float(max(viol)), np.array(d2))


def iso_segment_energy(inc: IsoModuli, a: IsoModuli, b: IsoModuli, t):
    """Bulk energy / 3 along the isotropic segment between two exterior tensors."""
    t = np.asarray(t)
    kappa = (1 - t) * a.kappa + t * b.kappa
    mu = (1 - t) * a.mu + t * b.mu
    return bulk_energy_third(inc.kappa, mu, kappa)
