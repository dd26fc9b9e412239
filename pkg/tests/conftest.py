import numpy as np
import pytest

from critwave.ground_state import make_W
from critwave.modulation import DistanceParams
from critwave.radial import Grid
from critwave.spectral import ground_eigenpair


class Setup:
    """Grid, ground state, eigenpair and distance parameters of one resolution."""

    def __init__(self, d: int, N: int = 2048, R_max: float | None = None):
        self.grid = Grid(d, N, R_max)
        self.family = make_W(self.grid)
        self.pair = ground_eigenpair(self.family)
        self.params = DistanceParams.defaults(self.family)

    def __iter__(self):
        return iter((self.grid, self.family, self.pair, self.params))


@pytest.fixture(scope="session")
def d3():
    return Setup(3)


@pytest.fixture(scope="session")
def d5():
    return Setup(5)


@pytest.fixture(scope="session")
def d3_fine():
    """Refined d=3 grid on which operator-level claims at 1e-6 are resolved."""
    return Setup(3, N=131072, R_max=160.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n][1])
