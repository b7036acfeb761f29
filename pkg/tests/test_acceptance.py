"""Acceptance suite: one test per criterion, each printing a single pass/fail line.

The FEM-backed criteria (5, 6, 7, 9, 10, 11) share memoized runs from
``embhom.validation``, so the expensive sweep is paid once per session.
Run with ``pytest -s tests/test_acceptance.py`` to see the lines.
"""

import pytest

from embhom import validation


def _check(k):
    r = getattr(validation, f"criterion_{k}")()
    print("\n" + r.line())
    assert r.passed, r.line()


def test_criterion_01_single_layer_spectrum():
    _check(1)


def test_criterion_02_single_layer_of_constant_field():
    _check(2)


def test_criterion_03_eshelby_traction_jump():
    _check(3)


def test_criterion_04_energy_triple_agreement():
    _check(4)


@pytest.mark.slow
def test_criterion_05_fem_matches_eshelby_energy():
    _check(5)


@pytest.mark.slow
def test_criterion_06_identity_microstructure():
    _check(6)


@pytest.mark.slow
def test_criterion_07_self_consistent_fixed_point():
    _check(7)


def test_criterion_08_concavity_algebra():
    _check(8)


@pytest.mark.slow
def test_criterion_09_primal_flux_duality():
    _check(9)


@pytest.mark.slow
def test_criterion_10_rescaling_trend_and_periodic_reference():
    _check(10)


@pytest.mark.slow
def test_criterion_11_korn_and_rigid_fields():
    _check(11)
