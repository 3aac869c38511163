import numpy as np
import pytest

from fattail.kernel import constant
from fattail.profile import Profile, grid_per_decade
from fattail.selftest import power_law
from fattail.solver import GridConfig, ProfileProblem, solve


@pytest.fixture(scope="session")
def plaw():
    """(1-rho) x^{-1-rho}, rho = 0.5, on [1e-5, 1e5] at 60 nodes per decade."""
    return power_law(0.5)


@pytest.fixture(scope="session")
def expo():
    """e^{-x} tabulated down to 1e-6; the steep tail closure stands in for the cutoff."""
    g = grid_per_decade(1e-6, 1e3, 60)
    return Profile(g, np.exp(-g.nodes), 0.0, 60.0)


@pytest.fixture(scope="session")
def coarse_constant():
    """Converged K = 2, rho = 0.5 profile on a coarse grid (a few seconds)."""
    prob = ProfileProblem(constant(), 0.5, grid=GridConfig(1e-4, 1e4, 30))
    p, rep = solve(prob)
    return prob, p, rep


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
