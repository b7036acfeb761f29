import warnings

import numpy as np
import pytest

from embhom import layer_potentials as lp
from embhom.tensor import IsoModuli

UNIT = IsoModuli.from_lame(1.0, 1.0)


def sphere(rng, n):
    x = rng.normal(size=(n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_quadrature_integrates_polynomials():
    q = lp.SphereQuadrature()
    assert q.integrate(lambda y: np.ones(len(y))) == pytest.approx(4 * np.pi)
    assert q.integrate(lambda y: y[:, 0] ** 2) == pytest.approx(4 * np.pi / 3)
    assert q.integrate(lambda y: y[:, 0] ** 2 * y[:, 1] ** 2) == pytest.approx(4 * np.pi / 15)
    assert abs(q.integrate(lambda y: y[:, 0] ** 3 * y[:, 2])) < 1e-14


def test_table_values_unit_moduli():
    eig = lp.table_eigenvalues(UNIT)
    assert eig["Z0"][0] == pytest.approx(1 / 9, rel=1e-14)
    assert eig["Zij"][0] == pytest.approx(1 / 3, rel=1e-14)
    assert eig["Rij"][0] == pytest.approx(11 / 45, rel=1e-14)


@pytest.mark.parametrize("lam,mu", [(1.0, 1.0), (0.3, 2.0), (4.0, 0.7)])
def test_single_layer_eigenfields(rng, lam, mu):
    m = IsoModuli.from_lame(lam, mu)
    eig = lp.table_eigenvalues(m)
    x = sphere(rng, 12)
    q = lp.SphereQuadrature()
    cases = [("Z0", lp.z0()), ("Zij", lp.zij(1, 3)), ("Rij", lp.rij(2, 3)), ("Rij", lp.zi(2))]
    for key, f in cases:
        got = lp.single_layer_apply(m, f, q, x)
        assert np.allclose(got, eig[key][0] * f(x), atol=1e-12)


def test_varphi_density_reproduces_linear_field(rng):
    m = IsoModuli.from_lame(0.8, 1.3)
    C = rng.normal(size=(3, 3))
    C = C + C.T
    x = sphere(rng, 10)
    got = lp.single_layer_apply(m, lp.varphi_density(m, C), lp.SphereQuadrature(), x)
    assert np.allclose(got, x @ C.T, atol=1e-12)


def test_exterior_continuity_and_decay(rng):
    m = IsoModuli.from_lame(1.0, 1.0)
    C = np.diag([1.0, -0.5, 0.2])
    phi = lp.varphi_density(m, C)
    q = lp.SphereQuadrature()
    x = sphere(rng, 3)
    near = lp.single_layer_apply(m, phi, q, (1 + 1e-7) * x)
    assert np.allclose(near, x @ C.T, atol=1e-6)
    far = [np.linalg.norm(lp.single_layer_apply(m, phi, q, R * x[0])) for R in (10.0, 20.0)]
    # traceless C: dipole-free density, field decays at least like R^-2
    assert far[1] / far[0] < 0.3


def test_near_sphere_warning():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        lp.single_layer_apply(UNIT, lp.z0(), lp.SphereQuadrature(), np.array([0.0, 0.0, 1.01]))
    assert any(issubclass(w.category, lp.QuadratureAccuracyWarning) for w in rec)


def test_green_function_symmetric(rng):
    x, y = rng.normal(size=3), rng.normal(size=3)
    G = lp.green_function(UNIT, x, y)
    assert np.allclose(G, G.T)
    assert np.allclose(G, lp.green_function(UNIT, y, x))
