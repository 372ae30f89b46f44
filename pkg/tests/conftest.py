import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stfe import Grid, GridFunction, NoiseModel

settings.register_profile(
    "stfe", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("stfe")

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def grid():
    return Grid(TWO_PI, 256)


@pytest.fixture(scope="session")
def small_grid():
    return Grid(TWO_PI, 64)


@pytest.fixture(scope="session")
def model():
    return NoiseModel.from_spectrum(TWO_PI)


@pytest.fixture
def u0(grid):
    return GridFunction(grid, 1 + 0.5 * np.sin(grid.x))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
