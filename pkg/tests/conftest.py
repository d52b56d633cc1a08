import numpy as np
import pytest

from chdyn.grid import build_grid
from chdyn.model import ModelParams
from chdyn.potentials import Logarithmic, PotentialSpec

REGIMES = [(1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture
def small_grid():
    return build_grid(1.0, 8, 5)


def log_params(L=1.0, sigma=1.0, theta=0.3, theta_c=1.0, eps=None):
    return ModelParams(L=L, sigma=sigma, potential=PotentialSpec(Logarithmic(theta, theta_c)), eps=eps)


def random_pair(grid, rng, linked=True, scale=1.0):
    bulk = scale * rng.standard_normal(grid.shape)
    surf = grid.trace(bulk) if linked else scale * rng.standard_normal(grid.surf_shape)
    return bulk, surf
