import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from twisted_ek.operators import twist_k  # noqa: E402
from twisted_ek.solver import solve_dirichlet  # noqa: E402

GRIDS = (65, 129, 257)


def convex_data(X, Y):
    # Hessian diag(0.6, 0.3): sigma_2 > 0
    return 0.3 * X * X + 0.15 * Y * Y


@pytest.fixture(scope="session")
def twist2():
    return twist_k()


@pytest.fixture(scope="session")
def twist2_family(twist2):
    """Solutions of Delta u + sigma_2(D^2 u) = 1 with convex quadratic data on three grids."""
    return [solve_dirichlet(twist2, 0.0, convex_data, points=P, warm_start="coarse") for P in GRIDS]


@pytest.fixture
def rng():
    return np.random.default_rng(7)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
