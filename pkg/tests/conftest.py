import numpy as np
import pytest

from eesim.background import CosmologyParams, derive_constants
from eesim.grid import PeriodicGrid


@pytest.fixture(scope="session")
def params():
    return CosmologyParams(lam=3.0, sound_speed_sq=0.2, rho_bar=1.0, a_ring=1.0)


@pytest.fixture(scope="session")
def dc(params):
    return derive_constants(params)


@pytest.fixture(scope="session")
def grid16():
    return PeriodicGrid(16)


@pytest.fixture(scope="session")
def grid8():
    return PeriodicGrid(8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
