import numpy as np
import pytest

from workbench.spin_algebra import Direction


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)


@pytest.fixture
def z_hat():
    return Direction(0.0, 0.0, 1.0)


@pytest.fixture
def x_hat():
    return Direction(1.0, 0.0, 0.0)
