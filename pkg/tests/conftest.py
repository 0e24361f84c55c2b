import numpy as np
import pytest

from gaia import tensor as tc


@pytest.fixture(autouse=True)
def _strict_numerics():
    """Run the whole suite with finite-output assertions on every op."""
    tc.debug_checks = True
    yield
    tc.debug_checks = False


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)
