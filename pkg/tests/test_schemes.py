import numpy as np
import pytest

from embhom import eshelby
from embhom.fem import SolverConfig, VoxelField, embedded_problem, mean_strain
from embhom.schemes import (
    BracketError,
    ClosedFormOracle,
    ConcavityError,
    EnergyOracle,
    FEMOracle,
    FixedPointError,
    F_closed,
    F_eval,
    F_value,
    G_closed,
    G_eval,
    G_value,
    approx1_iso,
    approx2,
    approx2_from_oracle,
    approx3,
    approx4_selfconsistent,
    golden_max,
    quadratic_order_between,
    run_schemes,
    total_energy,
)
from embhom.tensor import IDENTITY, EllipticityBand, IsoModuli, canonical_basis, is_isotropic, iso_to_full

BAND = EllipticityBand(1.0, 8.0)


def test_total_energy_constant_field():
    m = IsoModuli(3.0, 1.2)
    A = iso_to_full(m)
    want = sum(s @ A @ s for s in [canonical_basis(i, j) for i in range(1, 4) for j in range(i, 4)])
    assert total_energy(ClosedFormOracle(m), A) == pytest.approx(want)


def test_total_energy_iso_closed_forms():
    inc, mat = IsoModuli(2.0, 0.8), IsoModuli(5.0, 2.0)
    want = 3 * eshelby.energy_shear(inc, mat) + 3 * eshelby.energy_diagonal(inc, mat)
    assert total_energy(ClosedFormOracle(inc), iso_to_full(mat)) == pytest.approx(want, rel=1e-12)


def test_total_energy_concave_along_segments(rng):
    o = ClosedFormOracle(IsoModuli(2.0, 0.8))
    for _ in range(5):
        a = iso_to_full(IsoModuli(*rng.uniform([1, 0.5], [8, 4])))
        b = iso_to_full(IsoModuli(*rng.uniform([1, 0.5], [8, 4])))
        ea, eb = total_energy(o, a), total_energy(o, b)
        for t in (0.25, 0.5, 0.75):
            assert total_energy(o, t * b + (1 - t) * a) >= t * eb + (1 - t) * ea - 1e-12


def test_energy_below_unperturbed_value(rng):
    inc = IsoModuli(2.0, 0.8)
    o = ClosedFormOracle(inc)
    for _ in range(10):
        A = iso_to_full(IsoModuli(*rng.uniform([1, 0.5], [8, 4])))
        s = rng.normal(size=6)
        assert o(A, s) <= s @ iso_to_full(inc) @ s + 1e-12


def test_approx1_identity_case():
    inc = IsoModuli(1.0, 0.5)
    res = approx1_iso(ClosedFormOracle(inc), EllipticityBand(0.5, 4.0), tol=1e-9)
    assert res.moduli.kappa == pytest.approx(1.0, abs=1e-7)
    assert res.moduli.mu == pytest.approx(0.5, abs=1e-7)


def test_F_G_closed_values(rng):
    alpha = 1.5
    o = ClosedFormOracle(IsoModuli(alpha, alpha / 2))
    for kappa, mu in rng.uniform([1.5, 0.75], [6, 3], size=(10, 2)):
        assert F_eval(o, mu, kappa) == pytest.approx(F_value(alpha, mu, kappa), abs=1e-12)
        assert G_eval(o, mu, kappa) == pytest.approx(G_value(alpha, mu, kappa), abs=1e-12)
    m0 = IsoModuli(3.0, 1.1)
    o0 = ClosedFormOracle(m0)
    assert abs(F_eval(o0, m0.mu, m0.kappa)) < 1e-14
    assert abs(G_eval(o0, m0.mu, m0.kappa)) < 1e-14


def test_approx3_reconstructs_quadratic_form(rng):
    o = ClosedFormOracle(IsoModuli(2.0, 0.8))
    A1 = iso_to_full(IsoModuli(4.0, 1.5))
    M = approx3(o, A1)
    assert np.allclose(M, M.T)
    for _ in range(10):
        s, t = rng.normal(size=6), rng.normal(size=6)
        assert s @ M @ s == pytest.approx(o(A1, s), rel=1e-10)
        pol = 0.5 * (o(A1, s + t) - o(A1, s) - o(A1, t))
        assert s @ M @ t == pytest.approx(pol, rel=1e-9, abs=1e-12)
    assert is_isotropic(M, atol=1e-9)
    shear = 2 * o(A1, canonical_basis(1, 2))
    bulk = o(A1, IDENTITY) / 3
    assert M[5, 5] == pytest.approx(shear)
    assert M[0, 0] + 2 * M[0, 1] == pytest.approx(bulk)


def test_approx2_closed_form_columns():
    inc, mat = IsoModuli(2.0, 0.8), IsoModuli(4.0, 1.5)
    o = ClosedFormOracle(inc)
    M, asym = approx2_from_oracle(o, iso_to_full(mat))
    s = canonical_basis(1, 2)
    C = eshelby.interior_matrix(eshelby.EshelbyConfig(inc, mat, s))
    assert M @ s == pytest.approx(iso_to_full(inc) @ (s + C))
    assert asym < 1e-12


def test_approx4_constant_phase_one_step():
    m0 = IsoModuli(3.0, 1.2)
    A4, trace = approx4_selfconsistent(ClosedFormOracle(m0), BAND)
    assert len(trace.iterates) == 1 and trace.converged
    assert A4.kappa == pytest.approx(3.0, abs=1e-8) and A4.mu == pytest.approx(1.2, abs=1e-8)


def test_comparison_bounds_closed_form(rng):
    # F, G are monotone in the inclusion tensor: lower and upper phases bracket intermediate ones
    lo, hi = IsoModuli(BAND.alpha, BAND.alpha / 2), IsoModuli(BAND.beta, BAND.beta / 2)
    mid = IsoModuli(4.0, 2.0)
    om = ClosedFormOracle(mid)
    for kappa, mu in rng.uniform([1, 0.5], [8, 4], size=(20, 2)):
        assert F_closed(lo, mu, kappa) - 1e-12 <= F_eval(om, mu, kappa) <= F_closed(hi, mu, kappa) + 1e-12
        assert G_closed(lo, mu, kappa) - 1e-12 <= G_eval(om, mu, kappa) <= G_closed(hi, mu, kappa) + 1e-12


class _Shifted(EnergyOracle):
    """Energies of a constant iso field shifted far outside the band."""

    backend = "test"

    def _compute(self, A, sigma):
        return 100.0 * (sigma @ sigma), np.zeros(6)


def test_bracket_error():
    with pytest.raises(BracketError):
        approx4_selfconsistent(_Shifted(), BAND)


class _Linear(EnergyOracle):
    """Energies whose F and G roots are affine: mu_hat = 0.6 + 0.4 kappa, kappa_hat = 1 + 1.5 mu."""

    backend = "test"

    def _compute(self, A, sigma):
        from embhom.tensor import full_to_iso

        m = full_to_iso(A)
        if np.allclose(sigma, IDENTITY):
            return 3 * (1.0 + 1.5 * m.mu), np.zeros(6)
        return 0.6 + 0.4 * m.kappa, np.zeros(6)


def test_fixed_point_linear_map():
    A4, trace = approx4_selfconsistent(_Linear(), BAND, tol=1e-10)
    # fixed point of mu = 0.6 + 0.4 kappa, kappa = 1 + 1.5 mu
    assert A4.mu == pytest.approx(1.0 / 0.4, rel=1e-8)
    assert A4.kappa == pytest.approx(1 + 1.5 * 2.5, rel=1e-8)
    assert trace.converged and len(trace.iterates) < 200
    assert max(trace.residuals[-1]) <= 1e-10


def test_fixed_point_failure_reports_trace():
    with pytest.raises(FixedPointError) as exc:
        approx4_selfconsistent(_Linear(), BAND, max_iter=3, tol=1e-14)
    assert len(exc.value.trace.iterates) == 3
    assert not exc.value.trace.converged


def test_golden_max_detects_non_concavity():
    x, _ = golden_max(lambda t: -(t - 0.3) ** 2, 0.0, 1.0, 1e-8)
    assert x == pytest.approx(0.3, abs=1e-7)
    with pytest.raises(ConcavityError, match="wiggle"):
        golden_max(lambda t: np.cos(25 * t), 0.0, 1.0, 1e-6, label="wiggle")


def test_run_schemes_constant_closed_form():
    m0 = IsoModuli(3.0, 1.2)
    rep = run_schemes(ClosedFormOracle(m0), BAND, a1_tol=1e-9).check(BAND)
    A = iso_to_full(m0)
    assert np.allclose(rep.A2, A, atol=1e-6)
    assert np.allclose(rep.A3, A, atol=1e-6)
    assert rep.A4.kappa == pytest.approx(3.0, abs=1e-8)


def test_quadratic_order():
    assert quadratic_order_between(IsoModuli(1, 1), IsoModuli(2, 1.5), IsoModuli(3, 2))
    assert not quadratic_order_between(IsoModuli(1, 1), IsoModuli(2, 2.5), IsoModuli(3, 2))


# ---------------------------------------------------------------- FEM oracle (small meshes)

SMALL = SolverConfig(cg_tol=1e-10, L=2.0, nx=16)


def _constant_field(m, n=8, band=BAND):
    return VoxelField(n, np.broadcast_to(iso_to_full(m), (n, n, n, 6, 6)).copy(), band)


def _two_phase_field(lo, hi, n=8, seed=1, band=BAND):
    g = np.random.default_rng(seed).random((n, n, n)) < 0.5
    return VoxelField(n, np.stack([iso_to_full(lo), iso_to_full(hi)])[g.astype(int)], band)


def test_fem_constant_field_exact():
    m0 = IsoModuli(3.0, 1.2)
    o = FEMOracle(_constant_field(m0), SMALL)
    A = iso_to_full(m0)
    M, asym = approx2(o.field, A, SMALL, oracle=o)
    assert np.allclose(M, A)
    assert abs(F_eval(o, m0.mu, m0.kappa)) < 1e-12 and abs(G_eval(o, m0.mu, m0.kappa)) < 1e-12
    calls = o.solves
    total_energy(o, A)
    assert o.solves == calls  # every canonical load was already solved


def test_fem_comparison_bounds():
    lo, hi = IsoModuli(BAND.alpha, BAND.alpha / 2), IsoModuli(BAND.beta, BAND.beta / 2)
    f = _two_phase_field(IsoModuli(2.0, 1.0), IsoModuli(6.0, 2.5))
    o = FEMOracle(f, SMALL)
    for kappa, mu in ((2.0, 1.0), (5.0, 2.0), (7.5, 3.5)):
        assert F_closed(lo, mu, kappa) <= F_eval(o, mu, kappa) <= F_closed(hi, mu, kappa)
        assert G_closed(lo, mu, kappa) <= G_eval(o, mu, kappa) <= G_closed(hi, mu, kappa)
    assert max(o.duality) <= 10 * SMALL.cg_tol


def test_fem_approx2_asymmetry_identity():
    # from the weak form: t.A2 s - s.A2 t = (A t . <e(w_s)> - A s . <e(w_t)>), <.> the mean over B
    f = _two_phase_field(IsoModuli(2.0, 1.0), IsoModuli(6.0, 2.5))
    A = iso_to_full(IsoModuli(4.0, 1.7))
    o = FEMOracle(f, SMALL)
    raw = np.array([o.flux(A, e) for e in np.eye(6)]).T
    prob = embedded_problem(f, A, SMALL)
    E = np.array([mean_strain(prob.solve(e)) for e in np.eye(6)]).T  # column j: <e(w_{e_j})>
    pred = (A @ E) - (A @ E).T  # entry (i, j): e_i . A <e(w_j)> - e_j . A <e(w_i)>
    assert np.allclose(raw - raw.T, pred, atol=1e-8)
    M, asym = approx2(f, A, SMALL, oracle=o)
    assert np.allclose(M, M.T) and asym > 0
    assert np.all(np.linalg.eigvalsh(M) > 0)


def test_fem_approx2_symmetric_for_constant_inclusion():
    f = _constant_field(IsoModuli(2.0, 1.0))
    _, asym = approx2(f, iso_to_full(IsoModuli(4.0, 1.7)), SMALL)
    assert asym < 1e-6
