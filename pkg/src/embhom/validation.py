"""Acceptance checks shared by ``embhom validate`` and the test suite.

Each ``criterion_k`` returns a :class:`CriterionResult`. FEM-heavy pieces are
memoized so that criteria sharing the same solves (duality, Korn, the
two-phase sweep) run them once per process.
"""

import functools
import time
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import concavity, eshelby, layer_potentials as lp
from .fem import solver as fem
from .fem.mesh import TruncatedBoxMesh, element_dofs, element_stiffness
from .fem.kernels import ElementOperator
from .fem.voxel import VoxelField
from .microstructure import GeneratorSpec, generate, rescale
from .schemes import (
    ClosedFormOracle,
    FEMOracle,
    approx1_iso,
    approx2_from_oracle,
    approx3,
    approx4_selfconsistent,
    quadratic_order_between,
)
from .tensor import EllipticityBand, IsoModuli, canonical_basis, basis_pairs, iso_projection, iso_to_full, IDENTITY

SEED = 20240611
TWO_PHASE = (IsoModuli(2.0, 1.0), IsoModuli(6.0, 2.5))
SWEEP_N = (1, 2, 4)
SWEEP_CFG = fem.SolverConfig(cg_tol=1e-9, L=2.0, nx=32)
ESHELBY_NX = (24, 32, 48)
ESHELBY_L = 4.0
ESHELBY_TOL = 1e-10


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    seconds: float
    measured: dict = dc_field(default_factory=dict)
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{status}] criterion {self.number:>2}: {self.title} ({self.seconds:.2f} s) {vals}"

    def to_dict(self):
        return {
            "number": self.number,
            "title": self.title,
            "passed": bool(self.passed),
            "seconds": self.seconds,
            "measured": {k: _plain(v) for k, v in self.measured.items()},
            "note": self.note,
        }


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def _plain(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v


def _timed(fn):
    @functools.wraps(fn)
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        if "limit_s" in res.measured:
            res.passed = res.passed and res.seconds <= res.measured["limit_s"]
        return res

    return run


def _rng(k):
    return np.random.default_rng(SEED + k)


def _sphere_points(gen, n):
    x = gen.normal(size=(n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _random_moduli(gen, n, lo=0.2, hi=5.0):
    """Random (lam, mu) pairs with mu > 0 and lam > 0."""
    return [IsoModuli.from_lame(gen.uniform(lo, hi), gen.uniform(lo, hi)) for _ in range(n)]


# ----------------------------------------------------------------------------
# analytic criteria


@_timed
def criterion_1():
    """Single-layer spectrum on Z0, Zij, Rij, Zi by quadrature."""
    quad = lp.SphereQuadrature()
    gen = _rng(1)
    x = _sphere_points(gen, 20)
    moduli = [IsoModuli.from_lame(1.0, 1.0)] + _random_moduli(gen, 3)
    fields = [("Z0", lp.z0())] + [("Zij", lp.zij(i, j)) for i, j in ((1, 2), (1, 3), (2, 3))]
    fields += [("Rij", lp.rij(i, j)) for i, j in ((1, 2), (1, 3), (2, 3))] + [("Rij", lp.zi(i)) for i in (1, 2, 3)]
    worst = 0.0
    for m in moduli:
        eig = lp.table_eigenvalues(m)
        for key, f in fields:
            got = lp.single_layer_apply(m, f, quad, x)
            want = eig[key][0] * f(x)
            worst = max(worst, float(np.abs(got - want).max() / np.abs(want).max()))
    unit = lp.table_eigenvalues(IsoModuli.from_lame(1.0, 1.0))
    ref = {"Z0": 1 / 9, "Zij": 1 / 3, "Rij": 11 / 45}
    table_err = max(abs(unit[k][0] - v) / v for k, v in ref.items())
    return CriterionResult(
        1, "single-layer spectrum", worst <= 1e-6 and table_err <= 1e-12, 0.0,
        {"max_rel_error": worst, "table_rel_error": table_err, "tol": 1e-6, "limit_s": 5.0},
    )


@_timed
def criterion_2():
    """V phi_C = C x on the sphere."""
    quad = lp.SphereQuadrature()
    gen = _rng(2)
    x = _sphere_points(gen, 50)
    worst = 0.0
    for m in _random_moduli(gen, 5):
        for _ in range(10):
            C = gen.normal(size=(3, 3))
            C = 0.5 * (C + C.T)
            got = lp.single_layer_apply(m, lp.varphi_density(m, C), quad, x)
            worst = max(worst, float(np.linalg.norm(got - x @ C.T, axis=1).max()))
    return CriterionResult(2, "single layer of varphi_C", worst <= 1e-6, 0.0, {"max_error": worst, "tol": 1e-6, "limit_s": 10.0})


def _eshelby_configs(gen, n):
    yield IsoModuli.from_lame(1.0, 1.0), IsoModuli.from_lame(1.0, 2.0)
    for _ in range(n):
        a, b = _random_moduli(gen, 2)
        yield a, b


@_timed
def criterion_3():
    """Traction jump of the closed-form corrector."""
    gen = _rng(3)
    x = _sphere_points(gen, 50)
    worst = 0.0
    for inc, mat in _eshelby_configs(gen, 4):
        for i, j in basis_pairs():
            cfg = eshelby.EshelbyConfig(inc, mat, canonical_basis(i, j))
            sol = eshelby.solve(cfg)
            r = eshelby.traction_jump(cfg, sol, x) - eshelby.traction_jump_target(cfg, x)
            worst = max(worst, float(np.abs(r).max()))
    return CriterionResult(3, "Eshelby traction jump", worst <= 1e-12, 0.0, {"max_residual": worst, "tol": 1e-12, "limit_s": 1.0})


@_timed
def criterion_4():
    """General energy formula vs the shear and bulk closed forms."""
    gen = _rng(4)
    worst_s = worst_b = 0.0
    for _ in range(100):
        inc, mat = _random_moduli(gen, 2)
        for k, l in ((1, 2), (1, 3), (2, 3)):
            e = eshelby.energy(eshelby.EshelbyConfig(inc, mat, canonical_basis(k, l)))
            ref = eshelby.energy_shear(inc, mat)
            worst_s = max(worst_s, abs(e - ref) / abs(ref))
        e = eshelby.energy(eshelby.EshelbyConfig(inc, mat, IDENTITY))
        ref = eshelby.energy_bulk(inc, mat)
        worst_b = max(worst_b, abs(e - ref) / abs(ref))
    ok = worst_s <= 1e-12 and worst_b <= 1e-12
    return CriterionResult(4, "energy triple agreement", ok, 0.0, {"shear_rel": worst_s, "bulk_rel": worst_b, "tol": 1e-12, "limit_s": 1.0})


def _fd_second_derivative(mu0, kappa, mu):
    """Central second difference of mu0 - E_shear in extended precision, h = 1e-4 mu."""
    L = np.longdouble
    h = L(1e-4) * L(mu)
    inc = IsoModuli(L(1.0), L(mu0))

    def f(m):
        return L(mu0) - eshelby.energy_shear(inc, IsoModuli(L(kappa), m))

    return float((f(L(mu) + h) - 2 * f(L(mu)) + f(L(mu) - h)) / h**2)


@_timed
def criterion_8():
    """Concavity algebra: discriminant and gamma identities, f'', affine segment."""
    gen = _rng(8)
    trip = gen.uniform(0.1, 10.0, size=(1000, 3))
    disc = gam = fd = 0.0
    for mu0, kappa, mu in trip:
        w = concavity.witness(mu0, kappa, mu)
        disc = max(disc, abs(-w.discriminant - 640 * w.gamma0**3 * kappa**2) / (640 * w.gamma0**3 * kappa**2))
        lhs = 3 * w.gamma1 * w.gamma2 - 4 * w.gamma2**2 - 18 * w.gamma0
        gam = max(gam, abs(lhs - 5 * kappa**2) / (5 * kappa**2))
        f2, _ = concavity.shear_energy_second_derivative(mu0, kappa, mu)
        fd = max(fd, abs(_fd_second_derivative(mu0, kappa, mu) - f2) / abs(f2))
    aff = 0.0
    form = 0.0
    for alpha, beta in ((1.0, 3.0), (1.0, 2.5), (0.7, 4.0), (2.0, 9.0)):
        seg = concavity.affine_counterexample(alpha, beta, samples=3)
        aff = max(aff, abs(seg.f[0] - 2 * seg.f[1] + seg.f[2]))
        form = max(form, float(np.abs(seg.f - concavity.affine_closed_form(alpha, beta, seg.t)).max()))
    ok = disc <= 1e-9 and gam <= 1e-9 and fd <= 1e-5 and aff <= 1e-12 and form <= 1e-12
    return CriterionResult(
        8, "concavity algebra", ok, 0.0,
        {"discriminant_rel": disc, "gamma_rel": gam, "fd_rel": fd, "affine_second_diff": aff,
         "affine_form_err": form, "limit_s": 5.0},
    )


# ----------------------------------------------------------------------------
# FEM runs (memoized)


class SuiteLog:
    """Duality gaps and strain reports of every FEM solve made by the suite."""

    def __init__(self):
        self.duality = []  # (relative gap, cg_tol)
        self.korn = []

    def add_oracle(self, oracle: FEMOracle):
        self.duality += [(g, oracle.cfg.cg_tol) for g in oracle.duality]
        self.korn += oracle.korn


LOG = SuiteLog()


def constant_field(m: IsoModuli, n, band):
    return VoxelField(n, np.broadcast_to(iso_to_full(m), (n, n, n, 6, 6)).copy(), band)


@functools.lru_cache(maxsize=None)
def eshelby_fem_runs():
    inc, mat = IsoModuli.from_lame(1.0, 1.0), IsoModuli.from_lame(1.0, 2.0)
    band = EllipticityBand(1.0, 15.0)
    s = canonical_basis(1, 2)
    rows = []
    for nx in ESHELBY_NX:
        n = int(round(nx / ESHELBY_L))
        field = constant_field(inc, n, band)
        cfg = fem.SolverConfig(cg_tol=ESHELBY_TOL, L=ESHELBY_L, nx=nx)
        t0 = time.perf_counter()
        w = fem.solve_embedded(field, iso_to_full(mat), s, cfg)
        ep = fem.energy_primal(field, None, s, w)
        ef = fem.energy_flux(field, None, s, w)
        LOG.duality.append((abs(ep - ef) / abs(ep), cfg.cg_tol))
        LOG.korn.append(fem.strain_report(w))
        rows.append({"nx": nx, "energy": ep, "energy_flux": ef, "seconds": time.perf_counter() - t0,
                     "iterations": w.stats.iterations, "mean_strain_12": float(fem.mean_strain(w)[5])})
    return rows


@functools.lru_cache(maxsize=None)
def two_phase_sweep():
    base = generate(GeneratorSpec("two_phase_voxel", TWO_PHASE, n=4, p=0.5, seed=SEED))
    out = []
    for N in SWEEP_N:
        field = rescale(base, N)
        oracle = FEMOracle(field, SWEEP_CFG)
        oracle.check_korn = True
        t0 = time.perf_counter()
        A4, trace = approx4_selfconsistent(oracle, field.band)
        out.append({"N": N, "A4": A4, "trace": trace, "seconds": time.perf_counter() - t0, "solves": oracle.solves})
        LOG.add_oracle(oracle)
    M, asym = fem.periodic_tensor(base, SWEEP_CFG)
    return base, out, M


@functools.lru_cache(maxsize=None)
def identity_fem_run():
    m0 = IsoModuli(3.0, 1.2)
    band = EllipticityBand(1.0, 6.0)
    field = constant_field(m0, 8, band)
    cfg = fem.SolverConfig(cg_tol=1e-10, L=2.0, nx=16)
    oracle = FEMOracle(field, cfg)
    oracle.check_korn = True
    res = _identity_schemes(oracle, band, a1_tol=1e-4 * band.beta)
    LOG.add_oracle(oracle)
    return m0, res


def _identity_schemes(oracle, band, a1_tol):
    A1 = approx1_iso(oracle, band, tol=a1_tol).moduli
    A2, asym = approx2_from_oracle(oracle, iso_to_full(A1))
    A3 = approx3(oracle, iso_to_full(A1))
    A4, trace = approx4_selfconsistent(oracle, band)
    return {"A1": A1, "A2": A2, "A3": A3, "A4": A4, "trace": trace, "A2_asym": asym}


def _identity_errors(m0, res):
    ref = iso_to_full(m0)
    return {
        "A1": max(abs(res["A1"].kappa - m0.kappa) / m0.kappa, abs(res["A1"].mu - m0.mu) / m0.mu),
        "A2": float(np.linalg.norm(res["A2"] - ref) / np.linalg.norm(ref)),
        "A3": float(np.linalg.norm(res["A3"] - ref) / np.linalg.norm(ref)),
        "A4": max(abs(res["A4"].kappa - m0.kappa) / m0.kappa, abs(res["A4"].mu - m0.mu) / m0.mu),
    }


# ----------------------------------------------------------------------------
# FEM criteria


@_timed
def criterion_5():
    rows = eshelby_fem_runs()
    exact = 37 / 56
    err = [abs(r["energy"] - exact) / exact for r in rows]
    mono = all(b < a for a, b in zip(err, err[1:]))
    ok = err[-1] <= 0.05 and mono
    meas = {f"rel_err_nx{r['nx']}": e for r, e in zip(rows, err)}
    meas.update({"monotone": mono, "tol": 0.05, "limit_s": 600.0})
    return CriterionResult(5, "FEM vs closed-form Eshelby energy", ok, 0.0, meas)


@_timed
def criterion_6(use_fem=True):
    m0 = IsoModuli(3.0, 1.2)
    band = EllipticityBand(1.0, 6.0)
    res = _identity_schemes(ClosedFormOracle(m0), band, a1_tol=1e-8 * band.beta)
    err = _identity_errors(m0, res)
    meas = {f"analytic_{k}": v for k, v in err.items()}
    ok = max(err.values()) <= 1e-6
    if use_fem:
        m0f, resf = identity_fem_run()
        errf = _identity_errors(m0f, resf)
        meas.update({f"fem_{k}": v for k, v in errf.items()})
        ok = ok and max(errf.values()) <= 0.02
    return CriterionResult(6, "identity microstructure", ok, 0.0, meas, "" if use_fem else "analytic part only")


@_timed
def criterion_7(use_fem=True):
    band = EllipticityBand(1.0, 8.0)
    worst_iters = 0
    t0 = time.perf_counter()
    for m0 in (IsoModuli(1.5, 0.6), IsoModuli(3.0, 1.2), IsoModuli(7.0, 3.9)):
        _, trace = approx4_selfconsistent(ClosedFormOracle(m0), band)
        worst_iters = max(worst_iters, len(trace.iterates))
    analytic_s = time.perf_counter() - t0
    meas = {"analytic_outer_iterations": worst_iters, "analytic_seconds": analytic_s, "limit_analytic_s": 1.0}
    ok = worst_iters <= 3 and analytic_s <= 1.0
    if use_fem:
        base, sweep, _ = two_phase_sweep()
        lo, hi = TWO_PHASE
        in_band = all(base.band.contains_iso(r["A4"]) for r in sweep)
        between = all(quadratic_order_between(lo, r["A4"], hi) for r in sweep)
        meas.update({"fem_in_band": in_band, "fem_between_phases": between,
                     "fem_seconds_N1": sweep[0]["seconds"], "limit_fem_s": 1800.0})
        ok = ok and in_band and between and sweep[0]["seconds"] <= 1800.0
    return CriterionResult(7, "self-consistent fixed point", ok, 0.0, meas, "" if use_fem else "analytic part only")


@_timed
def criterion_9():
    eshelby_fem_runs()
    two_phase_sweep()
    identity_fem_run()
    ratios = [g / tol for g, tol in LOG.duality]
    worst = max(ratios)
    return CriterionResult(9, "primal/flux energy duality", worst <= 10.0, 0.0,
                           {"solves": len(ratios), "max_gap_over_cg_tol": worst, "tol": 10.0})


@_timed
def criterion_10():
    base, sweep, M = two_phase_sweep()
    k = np.array([r["A4"].kappa for r in sweep])
    m = np.array([r["A4"].mu for r in sweep])
    d1 = max(abs(k[1] - k[0]), abs(m[1] - m[0]))
    d2 = max(abs(k[2] - k[1]), abs(m[2] - m[1]))
    last = max(abs(k[2] - k[1]) / k[2], abs(m[2] - m[1]) / m[2])
    trend = d2 <= d1 or last <= 0.05
    kp, mp = iso_projection(M)
    per = max(abs(kp - k[-1]) / kp, abs(mp - m[-1]) / mp)
    total = sum(r["seconds"] for r in sweep)
    meas = {"kappa4": k.tolist(), "mu4": m.tolist(), "spread_12": d1, "spread_24": d2, "last_rel": last,
            "periodic_kappa": kp, "periodic_mu": mp, "periodic_rel": per, "sweep_seconds": total}
    ok = trend and per <= 0.10 and total <= 2700.0
    return CriterionResult(10, "rescaling trend and periodic reference", ok, 0.0, meas)


def rigid_field_report(L=2.0, nx=8, seed=SEED):
    """Strain report of a discrete rigid field M x + b on the truncated-box mesh."""
    gen = np.random.default_rng(seed)
    S = gen.normal(size=(3, 3))
    M = S - S.T
    b = gen.normal(size=3)
    mesh = TruncatedBoxMesh(L, nx)
    u = (mesh.node_coords() @ M.T + b).ravel()
    band = EllipticityBand(1.0, 2.0)
    op = ElementOperator(element_dofs(nx), np.zeros(nx**3, dtype=np.int64), element_stiffness(np.eye(6)[None], mesh.h), u.size)
    return fem._strain_report(u, op, mesh.h, band)


@_timed
def criterion_11():
    eshelby_fem_runs()
    two_phase_sweep()
    identity_fem_run()
    sym = max(r.max_pointwise_sym_ratio for r in LOG.korn)
    div = max(r.max_pointwise_div_ratio for r in LOG.korn)
    glob_ok = all(r.sym_norm <= r.grad_norm * (1 + 1e-14) and r.div_norm <= np.sqrt(3) * r.grad_norm * (1 + 1e-14)
                  for r in LOG.korn)
    rig = rigid_field_report()
    rigid = rig.sym_norm / rig.grad_norm
    ok = sym <= 1 + 1e-14 and div <= 1 + 1e-14 and glob_ok and rigid <= 1e-13
    return CriterionResult(11, "Korn and rigid-field invariants", ok, 0.0,
                           {"solutions": len(LOG.korn), "max_sym_over_grad": sym, "max_div_over_sqrt3_grad": div,
                            "rigid_sym_over_grad": rigid})


ANALYTIC = (1, 2, 3, 4, 8)
ALL = tuple(range(1, 12))


def run(numbers=ALL, quick=False):
    """Run criteria in order; with ``quick`` only the closed-form parts."""
    funcs = {
        1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
        6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10, 11: criterion_11,
    }
    out = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", lp.QuadratureAccuracyWarning)
        for k in numbers:
            if quick and k not in ANALYTIC + (6, 7):
                continue
            if quick and k in (6, 7):
                out.append(funcs[k](use_fem=False))
            else:
                out.append(funcs[k]())
    return out
