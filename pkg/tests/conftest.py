import numpy as np
import pytest

from reflected_coherence.grid import SpaceTimeGrid
from reflected_coherence.velocity import ConstantField, double_gyre


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-resolution benchmarks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-resolution benchmark, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def unit_grid():
    """Two slabs over a 4 x 4 unit square, reflecting."""
    return SpaceTimeGrid(tau=1.0, n_time=2, lower=[0, 0], upper=[1, 1], n_boxes=[4, 4], bc="reflecting")


@pytest.fixture
def gyre_grid():
    """A coarse double-gyre grid: 8 slabs over [0, 2 tau] with tau = 1, 8 x 4 boxes."""
    return SpaceTimeGrid(tau=1.0, n_time=8, lower=[0, 0], upper=[2, 1], n_boxes=[8, 4], bc="reflecting")


@pytest.fixture
def gyre():
    return double_gyre(tau=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def zero_field():
    return ConstantField([0.0, 0.0])
