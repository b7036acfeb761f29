"""Effective-tensor approximations built on embedded-corrector energies.

An :class:`EnergyOracle` maps an exterior tensor A and a load sigma to the
energy E_sigma(A) of the embedded corrector problem. On top of it:

* ``approx1_iso``: maximizer of the summed energy over isotropic A
* ``approx2``: averaged flux of the correctors with exterior A1
* ``approx3``: quadratic form sigma -> E_sigma(A1) as a 6x6 matrix
* ``approx4_selfconsistent``: isotropic fixed point of (F, G) = 0
"""

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np
from scipy.optimize import brentq

from . import eshelby
from ._accel import max_workers
from .fem import solver as fem
from .tensor import (
    DomainError,
    EllipticityBand,
    IDENTITY,
    IsoModuli,
    basis_pairs,
    canonical_basis,
    full_to_iso,
    in_class_M,
    iso_to_full,
)

BASIS = [canonical_basis(i, j) for i, j in basis_pairs()]
SHEAR = [canonical_basis(i, j) for i, j in ((1, 2), (1, 3), (2, 3))]
# Mandel scale of each canonical basis load: sigma^{ij} = c_j e_j
BASIS_SCALE = np.array([1.0, 1.0, 1.0, 1 / np.sqrt(2), 1 / np.sqrt(2), 1 / np.sqrt(2)])
# basis_pairs() order is (11, 22, 33, 23, 13, 12), matching Mandel components


class ConcavityError(RuntimeError):
    """A golden-section slice was not concave within tolerance."""


class BracketError(RuntimeError):
    """No sign change of F or G on the search interval."""


class FixedPointError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


# ----------------------------------------------------------------------------
# oracles


class EnergyOracle:
    """Memoized map (exterior tensor, sigma) -> (energy, mean flux over B)."""

    backend = "abstract"

    def __init__(self):
        self._cache = {}
        self._lock = threading.Lock()
        self.calls = 0
        self.solves = 0

    def _compute(self, A, sigma):
        raise NotImplementedError

    def _entry(self, A, sigma):
        A = np.ascontiguousarray(A, dtype=float)
        sigma = np.ascontiguousarray(sigma, dtype=float).reshape(6)
        key = (A.tobytes(), sigma.tobytes())
        with self._lock:
            self.calls += 1
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        val = self._compute(A, sigma)
        with self._lock:
            self.solves += 1
            self._cache[key] = val
        return val

    def energy(self, A, sigma):
        return self._entry(A, sigma)[0]

    __call__ = energy

    def flux(self, A, sigma):
        return self._entry(A, sigma)[1]

    def energies(self, A, sigmas):
        """Energies for several loads, concurrently up to HOMOG_THREADS workers."""
        workers = min(max_workers(), len(sigmas))
        if workers <= 1:
            return [self.energy(A, s) for s in sigmas]
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(lambda s: self.energy(A, s), sigmas))

    def describe(self):
        return {"backend": self.backend}


class ClosedFormOracle(EnergyOracle):
    """Constant isotropic inclusion in an isotropic exterior, in closed form."""

    backend = "closed_form_eshelby"

    def __init__(self, inclusion: IsoModuli):
        super().__init__()
        self.inclusion = inclusion

    def _compute(self, A, sigma):
        try:
            mat = full_to_iso(A)
        except ValueError as exc:
            raise DomainError("the closed-form oracle needs an isotropic exterior tensor") from exc
        cfg = eshelby.EshelbyConfig(self.inclusion, mat, sigma)
        return eshelby.energy(cfg), eshelby.flux(cfg)

    def describe(self):
        return {"backend": self.backend, "inclusion": {"kappa": self.inclusion.kappa, "mu": self.inclusion.mu}}


class FEMOracle(EnergyOracle):
    """Voxel FEM energies; records the primal/flux energy mismatch of every solve."""

    backend = "fem"

    def __init__(self, field, cfg: fem.SolverConfig):
        super().__init__()
        self.field = field
        self.cfg = cfg
        self.duality = []  # relative |primal - flux| per solve
        self.iterations = []
        self.residuals = []
        self.korn = []
        self.check_korn = False
        self._warm = {}

    def _compute(self, A, sigma):
        prob = fem.embedded_problem(self.field, A, self.cfg)
        skey = sigma.tobytes()
        w = prob.solve(sigma, x0=self._warm.get(skey))
        self._warm[skey] = w.values
        ep = fem.energy_primal(self.field, A, sigma, w)
        ef = fem.energy_flux(self.field, A, sigma, w)
        fl = fem.flux_average(self.field, sigma, w)
        with self._lock:
            self.duality.append(abs(ep - ef) / max(abs(ep), abs(ef), 1e-300))
            self.iterations.append(w.stats.iterations)
            self.residuals.append(w.stats.residual)
            if self.check_korn:
                self.korn.append(fem.strain_report(w))
        return ep, fl

    def describe(self):
        return {
            "backend": self.backend,
            "L": self.cfg.L,
            "nx": self.cfg.nx,
            "cg_tol": self.cfg.cg_tol,
            "n": self.field.n,
            "solves": self.solves,
            "max_duality_gap": max(self.duality, default=0.0),
        }


# ----------------------------------------------------------------------------
# energies


def total_energy(oracle: EnergyOracle, A):
    """Sum of E_sigma(A) over the six canonical loads sigma^{ij}, i <= j."""
    return float(sum(oracle.energies(A, BASIS)))


def F_eval(oracle: EnergyOracle, mu, kappa):
    """(1/3) sum_{i<j} E_{sigma^ij}(iso(kappa, mu)) - mu."""
    A = iso_to_full(IsoModuli(kappa, mu))
    return float(sum(oracle.energies(A, SHEAR)) / 3.0 - mu)


def G_eval(oracle: EnergyOracle, mu, kappa):
    """(1/3) E_Id(iso(kappa, mu)) - kappa."""
    A = iso_to_full(IsoModuli(kappa, mu))
    return float(oracle.energy(A, IDENTITY) / 3.0 - kappa)


def F_closed(inclusion: IsoModuli, mu, kappa):
    """F for a constant inclusion, e.g. iso(alpha, alpha/2) gives the lower comparison curve."""
    d = inclusion.mu - mu
    return d * (1.0 - 2.0 * d / (2.0 * inclusion.mu + (8 * mu + 3 * kappa) / (6 * mu + kappa) * mu))


def G_closed(inclusion: IsoModuli, mu, kappa):
    d = inclusion.kappa - kappa
    return d * (1.0 - d / (inclusion.kappa + 4 * mu))


def F_value(alpha, mu, kappa):
    return F_closed(IsoModuli(alpha, alpha / 2), mu, kappa)


def G_value(alpha, mu, kappa):
    return G_closed(IsoModuli(alpha, alpha / 2), mu, kappa)


# ----------------------------------------------------------------------------
# approximation 1


GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _check_concave(samples, slack, label):
    xs = sorted(samples)
    for (x0, f0), (x1, f1), (x2, f2) in zip(xs, xs[1:], xs[2:]):
        chord = f0 + (f2 - f0) * (x1 - x0) / (x2 - x0)
        if f1 < chord - slack:
            raise ConcavityError(
                f"{label}: value {f1:.12g} at {x1:.8g} lies {chord - f1:.3e} below the chord "
                f"between {x0:.8g} and {x2:.8g}"
            )


def golden_max(f, lo, hi, tol, label="slice", slack=0.0):
    """Maximize a concave scalar function on [lo, hi] by golden-section search.

    Every evaluated point is kept; any triple violating concavity by more
    than ``slack`` raises :class:`ConcavityError` naming the slice.
    """
    samples = {}

    def g(x):
        if x not in samples:
            samples[x] = f(x)
        return samples[x]

    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = g(c), g(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = g(d)
    # the endpoints themselves are candidates when the maximum sits on the boundary
    for x in (lo, hi):
        if abs(x - (a + b) / 2) <= tol:
            g(x)
    _check_concave(samples.items(), slack, label)
    best = max(samples.items(), key=lambda kv: kv[1])
    xm = 0.5 * (a + b)
    return (best[0] if best[1] > g(xm) else xm), samples


@dataclass
class Approx1Result:
    moduli: IsoModuli
    sweeps: int
    evaluations: int


def approx1_iso(oracle: EnergyOracle, band: EllipticityBand, tol=None, max_sweeps=50, slack=None, start=None):
    """Maximize (kappa, mu) -> total_energy(iso(kappa, mu)) over the isotropic band.

    Alternates golden-section maximization in mu (kappa fixed) and kappa
    (mu fixed) until neither coordinate moves by more than ``tol``
    (default 1e-6 beta).
    """
    tol = 1e-6 * band.beta if tol is None else tol
    kmin, kmax = band.alpha, band.beta
    mmin, mmax = band.alpha / 2, band.beta / 2
    kappa, mu = start if start is not None else (0.5 * (kmin + kmax), 0.5 * (mmin + mmax))
    evals = 0

    def total(k, m):
        return total_energy(oracle, iso_to_full(IsoModuli(k, m)))

    scale = abs(total(kappa, mu)) or 1.0
    slack = 1e-9 * scale if slack is None else slack

    def search(f, x, lo, hi, width, label):
        # after the first sweep, search a window around the current value and
        # fall back to the full interval if the maximizer lands on its edge
        nonlocal evals
        a, b = (lo, hi) if width is None else (max(lo, x - width), min(hi, x + width))
        xm, smp = golden_max(f, a, b, tol, label, slack)
        evals += len(smp)
        if (a > lo and xm - a <= tol) or (b < hi and b - xm <= tol):
            xm, smp = golden_max(f, lo, hi, tol, label, slack)
            evals += len(smp)
        return xm

    width = None
    for sweep in range(1, max_sweeps + 1):
        mu_new = search(lambda m: total(kappa, m), mu, mmin, mmax, width, f"mu-slice at kappa={kappa:.8g}")
        kappa_new = search(lambda k: total(k, mu_new), kappa, kmin, kmax, width, f"kappa-slice at mu={mu_new:.8g}")
        moved = max(abs(mu_new - mu), abs(kappa_new - kappa))
        kappa, mu = kappa_new, mu_new
        if moved <= tol:
            break
        width = max(4 * moved, 20 * tol)
    return Approx1Result(IsoModuli(kappa, mu), sweep, evals)


# ----------------------------------------------------------------------------
# approximations 2 and 3


def _mandel_columns(oracle, A1):
    return np.array([oracle.flux(A1, e) for e in np.eye(6)]).T


def approx2_from_oracle(oracle: EnergyOracle, A1):
    """Averaged-flux tensor: column j is the mean flux for the unit Mandel load e_j."""
    A1 = np.asarray(A1, dtype=float)
    M = _mandel_columns(oracle, A1)
    asym = float(np.linalg.norm(M - M.T) / max(np.linalg.norm(M), 1e-300))
    return 0.5 * (M + M.T), asym


def approx2(field, A1, cfg: fem.SolverConfig, oracle: Optional[FEMOracle] = None):
    """Averaged-flux tensor from FEM solves with exterior A1; returns (matrix, relative asymmetry)."""
    oracle = oracle or FEMOracle(field, cfg)
    return approx2_from_oracle(oracle, A1)


def approx3(oracle: EnergyOracle, A1):
    """Symmetric 6x6 matrix M with sigma . M sigma = E_sigma(A1).

    Diagonal from the six canonical loads, off-diagonal entries by
    polarization over the 15 pairs.
    """
    A1 = np.asarray(A1, dtype=float)
    e = np.array(oracle.energies(A1, BASIS))
    M = np.diag(e / BASIS_SCALE**2)
    for j in range(6):
        for k in range(j + 1, 6):
            ejk = oracle.energy(A1, BASIS[j] + BASIS[k])
            M[j, k] = M[k, j] = (ejk - e[j] - e[k]) / (2 * BASIS_SCALE[j] * BASIS_SCALE[k])
    return M


# ----------------------------------------------------------------------------
# approximation 4


@dataclass
class FixedPointTrace:
    iterates: List[tuple] = dc_field(default_factory=list)  # (kappa, mu)
    residuals: List[tuple] = dc_field(default_factory=list)  # (|F|, |G|)
    damped: List[bool] = dc_field(default_factory=list)
    converged: bool = False
    tol: float = 1e-6

    def rows(self):
        for t, ((k, m), (rf, rg), d) in enumerate(zip(self.iterates, self.residuals, self.damped)):
            yield {"t": t, "kappa": k, "mu": m, "abs_F": rf, "abs_G": rg, "damped": d}


def _root(fun, lo, hi, ext_lo, ext_hi, xtol, what):
    flo, fhi = fun(lo), fun(hi)
    if flo * fhi > 0:
        flo2, fhi2 = fun(ext_lo), fun(ext_hi)
        if flo2 * fhi2 > 0:
            raise BracketError(
                f"{what}: no sign change on [{lo:.6g}, {hi:.6g}] (values {flo:.3e}, {fhi:.3e}) "
                f"nor on [{ext_lo:.6g}, {ext_hi:.6g}]; the oracle lies outside the comparison bounds"
            )
        lo, hi = ext_lo, ext_hi
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    return brentq(fun, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)


def approx4_selfconsistent(
    oracle: EnergyOracle, band: EllipticityBand, tol=1e-6, max_iter=200, xtol=1e-10, start=None
):
    """Isotropic self-consistent moduli (kappa4, mu4) and the outer iteration trace.

    The outer map H(mu, kappa) = (mu_hat(kappa), kappa_hat(mu)) uses scalar
    root finds of F(., kappa) on [alpha/2, beta/2] and of G(mu, .) on
    [alpha, beta]. A step that would increase the max-residual is replaced
    by the midpoint between the current iterate and H(x).
    """
    trace = FixedPointTrace(tol=tol)
    kappa, mu = start if start is not None else (0.5 * (band.alpha + band.beta), 0.25 * (band.alpha + band.beta))

    def residual(k, m):
        return abs(F_eval(oracle, m, k)), abs(G_eval(oracle, m, k))

    def H(k, m):
        mu_hat = _root(
            lambda x: F_eval(oracle, x, k), band.alpha / 2, band.beta / 2,
            band.alpha_minus / 2, band.beta_plus / 2, xtol, f"F(., kappa={k:.8g})",
        )
        kappa_hat = _root(
            lambda x: G_eval(oracle, m, x), band.alpha, band.beta,
            band.alpha_minus, band.beta_plus, xtol, f"G(mu={m:.8g}, .)",
        )
        return kappa_hat, mu_hat

    prev = max(residual(kappa, mu))
    for _ in range(max_iter):
        kh, mh = H(kappa, mu)
        r = residual(kh, mh)
        damped = False
        if max(r) > prev:
            # residual grew: take half of the step instead
            kh, mh = 0.5 * (kappa + kh), 0.5 * (mu + mh)
            r = residual(kh, mh)
            damped = True
        kappa, mu = kh, mh
        trace.iterates.append((kappa, mu))
        trace.residuals.append(r)
        trace.damped.append(damped)
        prev = max(r)
        if r[0] <= tol and r[1] <= tol:
            trace.converged = True
            return IsoModuli(kappa, mu), trace
    raise FixedPointError(f"self-consistent iteration did not converge in {max_iter} steps", trace)


# ----------------------------------------------------------------------------
# reports


@dataclass
class EffectiveTensorReport:
    A1: Optional[IsoModuli] = None
    A2: Optional[np.ndarray] = None
    A3: Optional[np.ndarray] = None
    A4: Optional[IsoModuli] = None
    trace: Optional[FixedPointTrace] = None
    A2_asymmetry: Optional[float] = None
    metadata: dict = dc_field(default_factory=dict)

    def check(self, band: EllipticityBand):
        for name in ("A1", "A4"):
            m = getattr(self, name)
            if m is not None and not band.contains_iso(m):
                raise DomainError(f"{name} = {m} outside the band")
        for name in ("A2", "A3"):
            M = getattr(self, name)
            if M is not None and not np.allclose(M, M.T):
                raise ValueError(f"{name} is not symmetric")
        return self


def run_schemes(oracle: EnergyOracle, band: EllipticityBand, schemes=("A1", "A2", "A3", "A4"), a1_tol=None, a4_tol=1e-6):
    """Run the requested approximations; A2 and A3 use A1 as the exterior tensor."""
    rep = EffectiveTensorReport()
    times = {}
    need_a1 = any(s in schemes for s in ("A1", "A2", "A3"))
    if need_a1:
        t0 = time.perf_counter()
        res = approx1_iso(oracle, band, tol=a1_tol)
        rep.A1 = res.moduli
        times["A1"] = time.perf_counter() - t0
        rep.metadata["A1_sweeps"] = res.sweeps
    A1 = iso_to_full(rep.A1) if rep.A1 is not None else None
    if "A2" in schemes:
        t0 = time.perf_counter()
        rep.A2, rep.A2_asymmetry = approx2_from_oracle(oracle, A1)
        times["A2"] = time.perf_counter() - t0
    if "A3" in schemes:
        t0 = time.perf_counter()
        rep.A3 = approx3(oracle, A1)
        times["A3"] = time.perf_counter() - t0
    if "A4" in schemes:
        t0 = time.perf_counter()
        rep.A4, rep.trace = approx4_selfconsistent(oracle, band, tol=a4_tol)
        times["A4"] = time.perf_counter() - t0
    rep.metadata.update({"runtimes": times, "oracle": oracle.describe()})
    return rep


def quadratic_order_between(lo: IsoModuli, mid: IsoModuli, hi: IsoModuli, rtol=1e-9):
    """lo <= mid <= hi in the quadratic-form order of isotropic tensors."""
    ok_lo = mid.kappa >= lo.kappa * (1 - rtol) and mid.mu >= lo.mu * (1 - rtol)
    ok_hi = mid.kappa <= hi.kappa * (1 + rtol) and mid.mu <= hi.mu * (1 + rtol)
    return ok_lo and ok_hi


__all__ = [
    "EnergyOracle",
    "ClosedFormOracle",
    "FEMOracle",
    "total_energy",
    "F_eval",
    "G_eval",
    "F_value",
    "G_value",
    "F_closed",
    "G_closed",
    "approx1_iso",
    "approx2",
    "approx2_from_oracle",
    "approx3",
    "approx4_selfconsistent",
    "FixedPointTrace",
    "EffectiveTensorReport",
    "run_schemes",
    "golden_max",
    "ConcavityError",
    "BracketError",
    "FixedPointError",
    "in_class_M",
]
