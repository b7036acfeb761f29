import warnings

import numpy as np
import pytest

from embhom.layer_potentials import QuadratureAccuracyWarning


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_near_sphere():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", QuadratureAccuracyWarning)
        yield
