import numpy as np
import pytest

from medianflow.spectral import make_grid, random_field


@pytest.fixture
def grid16():
    return make_grid(16)


@pytest.fixture
def grid32():
    return make_grid(32)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def rand_field(grid, seed=0, spectrum=0.0):
    return random_field(grid, np.random.default_rng(seed), spectrum=spectrum)
