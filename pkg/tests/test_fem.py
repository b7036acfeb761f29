import numpy as np
import pytest

from embhom import eshelby
from embhom.fem import (
    SolverConfig,
    SolverError,
    TruncatedBoxMesh,
    VoxelField,
    VoxelFormatError,
    embedded_problem,
    energy_flux,
    energy_primal,
    flux_average,
    mean_strain,
    periodic_tensor,
    read_voxel_field,
    residual,
    solve_embedded,
    solve_periodic,
    strain_report,
    write_voxel_field,
)
from embhom.fem.kernels import ElementOperator
from embhom.fem.mesh import element_dofs, element_stiffness, mean_strain_matrix, strain_matrices
from embhom.tensor import (
    IDENTITY,
    DomainError,
    EllipticityBand,
    IsoModuli,
    canonical_basis,
    iso_projection,
    iso_to_full,
)
from embhom.validation import rigid_field_report

BAND = EllipticityBand(1.0, 15.0)
SMALL = SolverConfig(cg_tol=1e-10, L=2.0, nx=16)
INC = IsoModuli.from_lame(1.0, 1.0)  # kappa 5, mu 1
MAT = IsoModuli.from_lame(1.0, 2.0)  # kappa 7, mu 2


def constant(m, n=8, band=BAND):
    return VoxelField(n, np.broadcast_to(iso_to_full(m), (n, n, n, 6, 6)).copy(), band)


def two_phase(n=8, seed=3, band=BAND):
    g = np.random.default_rng(seed).random((n, n, n)) < 0.5
    table = np.stack([iso_to_full(INC), iso_to_full(MAT)])
    return VoxelField(n, table[g.astype(int)], band)


# ---------------------------------------------------------------- elements


def test_element_stiffness_null_space():
    K = element_stiffness(iso_to_full(IsoModuli(3.0, 1.0))[None], 0.5)[0]
    ev = np.linalg.eigvalsh(K)
    assert np.allclose(K, K.T)
    assert np.sum(np.abs(ev) < 1e-10 * ev.max()) == 6
    assert ev.min() > -1e-12


def test_strain_matrix_on_linear_field():
    h = 0.3
    M = np.array([[0.1, 0.4, -0.2], [0.3, -0.5, 0.7], [0.2, 0.1, 0.9]])
    local = np.array([[a & 1, (a >> 1) & 1, (a >> 2) & 1] for a in range(8)]) * h
    u = (local @ M.T).ravel()
    e = 0.5 * (M + M.T)
    want = np.array([e[0, 0], e[1, 1], e[2, 2], np.sqrt(2) * e[1, 2], np.sqrt(2) * e[0, 2], np.sqrt(2) * e[0, 1]])
    for B in strain_matrices(h):
        assert np.allclose(B @ u, want)
    assert np.allclose(mean_strain_matrix(h) @ u, h**3 * want)


def test_mesh_validation():
    with pytest.raises(ValueError):
        TruncatedBoxMesh(1.5, 16)
    with pytest.raises(ValueError):
        TruncatedBoxMesh(2.0, 15)
    with pytest.raises(ValueError):
        TruncatedBoxMesh(2.5, 16)  # no nodes on x = +-1
    with pytest.raises(ValueError):
        embedded_problem(constant(INC, n=6), iso_to_full(MAT), SMALL)


def test_backends_agree(rng):
    nx = 6
    D = np.stack([iso_to_full(INC), iso_to_full(MAT)])
    mat = rng.integers(0, 2, nx**3)
    ke = element_stiffness(D, 0.2)
    a = ElementOperator(element_dofs(nx), mat, ke, 3 * (nx + 1) ** 3, backend="numba")
    b = ElementOperator(element_dofs(nx), mat, ke, 3 * (nx + 1) ** 3, backend="numpy")
    u = rng.normal(size=a.ndof)
    assert np.allclose(a.matvec(u), b.matvec(u), atol=1e-12)
    assert np.allclose(a.element_energies(u), b.element_energies(u))
    assert u @ a.matvec(u) == pytest.approx(a.element_energies(u).sum())


# ---------------------------------------------------------------- voxel IO


def test_voxel_roundtrip(tmp_path):
    f = two_phase(n=4)
    p = tmp_path / "f.voxf"
    write_voxel_field(p, f, provenance={"seed": 3, "generator": "test"})
    raw = p.read_bytes()
    assert raw[:4] == b"VOXF" and len(raw) == 64 + 4**3 * 21 * 8
    assert raw[32:64] == bytes(32)
    g = read_voxel_field(p)
    assert g.n == 4 and np.array_equal(g.tensors, f.tensors)
    assert (g.band.alpha, g.band.beta) == (BAND.alpha, BAND.beta)


def test_voxel_record_layout(tmp_path):
    f = constant(INC, n=2)
    f.tensors[1, 0, 0] = iso_to_full(MAT)  # x index 1 -> record 4
    p = tmp_path / "g.voxf"
    write_voxel_field(p, f)
    rec = np.frombuffer(p.read_bytes(), "<f8", offset=64).reshape(8, 21)
    assert rec[4, 0] == pytest.approx(iso_to_full(MAT)[0, 0])
    assert rec[0, 0] == pytest.approx(iso_to_full(INC)[0, 0])


def test_voxel_bad_files(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"XXXX" + bytes(60))
    with pytest.raises(VoxelFormatError):
        read_voxel_field(p)
    write_voxel_field(p, constant(INC, n=2))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(VoxelFormatError):
        read_voxel_field(p)


def test_voxel_validation():
    f = constant(IsoModuli(50.0, 1.0), n=2)
    with pytest.raises(DomainError):
        f.validate()


# ---------------------------------------------------------------- embedded problem


def test_constant_field_gives_zero_corrector():
    f = constant(MAT)
    A = iso_to_full(MAT)
    w = solve_embedded(f, A, IDENTITY, SMALL)
    assert np.all(w.values == 0)
    assert energy_primal(f, A, IDENTITY, w) == pytest.approx(3 * MAT.kappa)
    assert energy_flux(f, A, IDENTITY, w) == pytest.approx(3 * MAT.kappa)
    assert np.allclose(flux_average(f, IDENTITY, w), A @ IDENTITY)


def test_zero_load_gives_zero():
    f = two_phase()
    w = solve_embedded(f, iso_to_full(MAT), np.zeros(6), SMALL)
    assert np.all(w.values == 0)


def test_exterior_outside_band_rejected():
    with pytest.raises(DomainError):
        solve_embedded(two_phase(), iso_to_full(IsoModuli(100.0, 1.0)), IDENTITY, SMALL)


def test_cg_failure_raises():
    cfg = SolverConfig(cg_tol=1e-12, L=2.0, nx=16, cg_max_iter=3)
    with pytest.raises(SolverError) as exc:
        solve_embedded(two_phase(), iso_to_full(MAT), canonical_basis(1, 2), cfg)
    assert exc.value.residual > 1e-12


@pytest.fixture(scope="module")
def eshelby_small():
    f = constant(INC, n=8)
    A = iso_to_full(MAT)
    s = canonical_basis(1, 2)
    return f, A, s, solve_embedded(f, A, s, SMALL)


def test_solution_properties(eshelby_small):
    f, A, s, w = eshelby_small
    assert residual(w) <= 10 * SMALL.cg_tol
    nodes = w.problem.mesh.boundary_nodes()
    assert np.all(w.nodal()[nodes] == 0)
    g = w.gauged()
    assert np.allclose(w.problem._ball_mean((g).ravel()), 0, atol=1e-14)
    ep, ef = energy_primal(f, A, s, w), energy_flux(f, A, s, w)
    assert abs(ep - ef) <= 10 * SMALL.cg_tol * abs(ep)
    # minimization bound: the corrector lowers the energy below the v = 0 value
    assert ep <= s @ iso_to_full(INC) @ s


def test_coarse_eshelby_energy(eshelby_small):
    # frozen regression at L = 2, nx = 16; the closed form is 37/56
    f, A, s, w = eshelby_small
    e = energy_primal(f, A, s, w)
    assert abs(e - 37 / 56) / (37 / 56) < 0.15
    C = eshelby.interior_matrix(eshelby.EshelbyConfig(INC, MAT, s))
    assert mean_strain(w)[5] == pytest.approx(C[5], rel=0.3)
    fl = flux_average(f, s, w)
    assert np.allclose(fl[:5], 0, atol=1e-10)


def test_ellipticity_and_korn(eshelby_small):
    f, A, s, w = eshelby_small
    r = strain_report(w)
    assert r.alpha_bound <= r.energy <= r.beta_bound
    assert r.sym_norm <= r.grad_norm
    assert r.div_norm <= np.sqrt(3) * r.grad_norm
    assert r.max_pointwise_sym_ratio <= 1 + 1e-14
    assert r.max_pointwise_div_ratio <= 1 + 1e-14


def test_linearity_in_load():
    f = two_phase()
    A = iso_to_full(MAT)
    prob = embedded_problem(f, A, SMALL)
    s1, s2 = canonical_basis(1, 1), canonical_basis(2, 3)
    w1, w2, w12 = prob.solve(s1), prob.solve(s2), prob.solve(2 * s1 - 0.5 * s2)
    scale = np.abs(w12.values).max()
    assert np.abs(w12.values - (2 * w1.values - 0.5 * w2.values)).max() <= 1e-7 * scale


def test_rigid_field_has_no_strain():
    r = rigid_field_report()
    assert r.sym_norm <= 1e-13 * r.grad_norm
    assert r.grad_norm > 1.0


# ---------------------------------------------------------------- periodic problem


def test_periodic_constant():
    f = constant(MAT, n=4)
    w, flux = solve_periodic(f, canonical_basis(1, 2), SMALL, ne=8)
    assert np.allclose(w.values, 0)
    assert np.allclose(flux, iso_to_full(MAT) @ canonical_basis(1, 2))


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_periodic_laminate(axis):
    p1, p2 = IsoModuli.from_lame(1.0, 1.0), IsoModuli.from_lame(3.0, 4.0)
    n = 4
    T = np.empty((n, n, n, 6, 6))
    idx = [slice(None)] * 3
    for i in range(n):
        idx[axis] = i
        T[tuple(idx)] = iso_to_full(p1 if i < 2 else p2)
    f = VoxelField(n, T, EllipticityBand(1.0, 30.0))
    M = np.array([p.lam + 2 * p.mu for p in (p1, p2)])
    lam = np.array([p.lam for p in (p1, p2)])
    load = np.zeros(6)
    load[axis] = 1.0
    _, flux = solve_periodic(f, load, SMALL, ne=4)
    # classical laminate: harmonic mean of lam + 2 mu normal to the layers
    assert flux[axis] == pytest.approx(1 / np.mean(1 / M), rel=1e-8)
    other = (axis + 1) % 3
    assert flux[other] == pytest.approx(np.mean(lam / M) / np.mean(1 / M), rel=1e-8)


def test_periodic_voigt_and_reuss_bounds():
    f = two_phase(n=4)
    Mh, asym = periodic_tensor(f, SMALL, ne=8)
    assert asym < 1e-8
    voigt = f.tensors.reshape(-1, 6, 6).mean(axis=0)
    reuss = np.linalg.inv(np.linalg.inv(f.tensors.reshape(-1, 6, 6)).mean(axis=0))
    for s in np.random.default_rng(0).normal(size=(10, 6)):
        q = s @ Mh @ s
        assert q <= s @ voigt @ s + 1e-9
        assert q >= s @ reuss @ s - 1e-9
    k, m = iso_projection(Mh)
    assert INC.kappa < k < MAT.kappa and INC.mu < m < MAT.mu
