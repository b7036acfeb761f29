"""Fourth-order elasticity tensors in Mandel notation (d = 3).

Symmetric 3x3 matrices are stored as Mandel 6-vectors

    m = (e11, e22, e33, sqrt(2) e23, sqrt(2) e13, sqrt(2) e12)

and tensors with major and minor symmetries as symmetric 6x6 matrices acting
on them. The encoding is orthonormal: Frobenius products of matrices equal dot
products of Mandel vectors, and ellipticity bounds become bounds on the 6x6
spectrum.
"""

from dataclasses import dataclass

import numpy as np

SQRT2 = np.sqrt(2.0)

# Mandel slot -> (row, col), zero-based
MANDEL_PAIRS = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
_WEIGHTS = np.array([1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])

IDENTITY = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])

# relative slack used by in_class_M
CLASS_M_RTOL = 1e-10


class DomainError(ValueError):
    """Moduli or tensors outside their admissible set."""


@dataclass(frozen=True)
class IsoModuli:
    """Isotropic moduli in the (kappa, mu) parameterization.

    ``kappa = 2 mu + 3 lambda`` is three times the usual bulk modulus, so that
    the Mandel spectrum of the tensor is ``{kappa, 2mu (x5)}``.
    """

    kappa: float
    mu: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.mu > 0):
            raise DomainError(f"moduli must be positive, got kappa={self.kappa}, mu={self.mu}")

    @property
    def lam(self):
        return (self.kappa - 2.0 * self.mu) / 3.0

    @classmethod
    def from_lame(cls, lam, mu):
        return cls(2.0 * mu + 3.0 * lam, mu)

    def as_tuple(self):
        return (float(self.kappa), float(self.mu))


@dataclass(frozen=True)
class EllipticityBand:
    """Bounds ``alpha <= spec(A) <= beta`` plus the extended band used by root finders."""

    alpha: float
    beta: float
    alpha_minus: float = None
    beta_plus: float = None

    def __post_init__(self):
        if self.alpha_minus is None:
            object.__setattr__(self, "alpha_minus", 0.5 * self.alpha)
        if self.beta_plus is None:
            object.__setattr__(self, "beta_plus", 2.0 * self.beta)
        if not (0 < self.alpha_minus < self.alpha < self.beta < self.beta_plus):
            raise DomainError(
                "band must satisfy 0 < alpha_minus < alpha < beta < beta_plus, got "
                f"{self.alpha_minus}, {self.alpha}, {self.beta}, {self.beta_plus}"
            )

    def contains_iso(self, m: IsoModuli) -> bool:
        lo, hi = self.alpha * (1 - CLASS_M_RTOL), self.beta * (1 + CLASS_M_RTOL)
        return lo <= m.kappa <= hi and lo <= 2 * m.mu <= hi


def to_mandel(s):
    """3x3 symmetric matrix (or stack of them) -> Mandel vector(s)."""
    s = np.asarray(s, dtype=float)
    return np.stack([s[..., i, j] for i, j in MANDEL_PAIRS], axis=-1) * _WEIGHTS


def from_mandel(m):
    """Mandel vector(s) -> symmetric 3x3 matrix (or stack)."""
    m = np.asarray(m, dtype=float)
    out = np.empty(m.shape[:-1] + (3, 3))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        v = m[..., a] / _WEIGHTS[a]
        out[..., i, j] = v
        out[..., j, i] = v
    return out


def canonical_basis(i, j):
    """Mandel vector of sigma^{ij} = (e_i (x) e_j + e_j (x) e_i) / 2, indices 1..3."""
    if not (1 <= i <= 3 and 1 <= j <= 3):
        raise ValueError(f"basis indices must lie in 1..3, got ({i}, {j})")
    s = np.zeros((3, 3))
    s[i - 1, j - 1] += 0.5
    s[j - 1, i - 1] += 0.5
    return to_mandel(s)


def basis_pairs():
    """The six (i, j) with 1 <= i <= j <= 3, in Mandel slot order."""
    return [(1, 1), (2, 2), (3, 3), (2, 3), (1, 3), (1, 2)]


SHEAR_PAIRS = [(1, 2), (1, 3), (2, 3)]


def tensor_to_mandel(c):
    """Full 3x3x3x3 tensor -> 6x6 Mandel matrix."""
    c = np.asarray(c, dtype=float)
    a = np.empty((6, 6))
    for p, (i, j) in enumerate(MANDEL_PAIRS):
        for q, (k, l) in enumerate(MANDEL_PAIRS):
            a[p, q] = c[i, j, k, l] * _WEIGHTS[p] * _WEIGHTS[q]
    return a


def mandel_to_tensor(a):
    """6x6 Mandel matrix -> full 3x3x3x3 tensor with all minor symmetries."""
    a = np.asarray(a, dtype=float)
    c = np.empty((3, 3, 3, 3))
    for p, (i, j) in enumerate(MANDEL_PAIRS):
        for q, (k, l) in enumerate(MANDEL_PAIRS):
            v = a[p, q] / (_WEIGHTS[p] * _WEIGHTS[q])
            for ii, jj in {(i, j), (j, i)}:
                for kk, ll in {(k, l), (l, k)}:
                    c[ii, jj, kk, ll] = v
    return c


def apply(a, s):
    """(A sigma) as a Mandel vector."""
    return np.asarray(a) @ np.asarray(s)


def energy_quadratic(a, s):
    """sigma . A sigma."""
    s = np.asarray(s)
    return float(s @ (np.asarray(a) @ s))


def iso_to_full(m: IsoModuli):
    """Mandel matrix of the isotropic tensor A sigma = 2 mu sigma + lambda Tr(sigma) Id."""
    if not isinstance(m, IsoModuli):
        raise TypeError("expected IsoModuli")
    a = 2.0 * m.mu * np.eye(6)
    a[:3, :3] += m.lam
    return a


def iso_projection(a):
    """Closest isotropic moduli (Frobenius sense) to a Mandel matrix.

    Returns the raw ``(kappa, mu)`` pair without positivity checks.
    """
    a = np.asarray(a)
    kappa = IDENTITY @ a @ IDENTITY / 3.0
    mu = (np.trace(a) - kappa) / 10.0
    return float(kappa), float(mu)


def full_to_iso(a, atol=1e-10):
    """Inverse of :func:`iso_to_full`; raises if ``a`` is not isotropic."""
    kappa, mu = iso_projection(a)
    m = IsoModuli(kappa, mu)
    scale = max(np.abs(a).max(), 1e-300)
    if np.abs(iso_to_full(m) - a).max() > atol * scale:
        raise DomainError("tensor is not isotropic")
    return m


def is_isotropic(a, atol=1e-10):
    try:
        full_to_iso(a, atol)
    except DomainError:
        return False
    return True


def in_class_M(a, band: EllipticityBand) -> bool:
    """Whether all Mandel eigenvalues lie in [alpha, beta] (with round-off slack)."""
    a = np.asarray(a)
    if not np.allclose(a, a.T, rtol=0, atol=CLASS_M_RTOL * max(np.abs(a).max(), 1.0)):
        return False
    ev = np.linalg.eigvalsh(0.5 * (a + a.T))
    return bool(ev[0] >= band.alpha * (1 - CLASS_M_RTOL) and ev[-1] <= band.beta * (1 + CLASS_M_RTOL))


def contract(c, s33):
    """Brute-force (A sigma)_ij = sum_kl A_ijkl sigma_kl on full arrays."""
    c = np.asarray(c)
    s33 = np.asarray(s33)
    out = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            for k in range(3):
                for l in range(3):
                    out[i, j] += c[i, j, k, l] * s33[k, l]
    return out


def frob(s, t):
    """Frobenius product of two Mandel vectors (equals the 3x3 one)."""
    return float(np.dot(s, t))


def trace(s):
    return float(np.sum(np.asarray(s)[..., :3], axis=-1))
