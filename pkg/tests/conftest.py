import numpy as np
import pytest

from liquidex.boundary_solver import SolverConfig, solve
from liquidex.model_core import ModelParams

from oracles import P1, P2, P3


@pytest.fixture(scope="session")
def p1():
    return ModelParams(**P1)


@pytest.fixture(scope="session")
def p2():
    return ModelParams(**P2)


@pytest.fixture(scope="session")
def p3():
    return ModelParams(**P3)


@pytest.fixture(scope="session")
def p1_small_solution(p1):
    """A cheap P1 boundary for tests that only need a reasonable shape."""
    return solve(p1, SolverConfig(grid_size=20, mc_samples=20_000, seed=1))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
