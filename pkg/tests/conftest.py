import numpy as np
import pytest

from npsecontrol.adjoint import CostKind
from npsecontrol.core import PhysicalParams, make_spatial_grid, make_time_grid
from npsecontrol.optimize import build_problem
from npsecontrol.potential import BoxPotential


@pytest.fixture(scope="session")
def params():
    return PhysicalParams()


@pytest.fixture(scope="session")
def linear_params():
    return PhysicalParams(a_s=0.0)


@pytest.fixture(scope="session")
def box():
    return BoxPotential()


@pytest.fixture(scope="session")
def grid512():
    return make_spatial_grid(120.0, 512)


@pytest.fixture(scope="session")
def coarse_problem(box, params):
    """n_z = 128, n_t = 300, r_comp = 0.5 over 20 ms."""
    return build_problem(box, params, make_spatial_grid(120.0, 128), make_time_grid(20.0, 300),
                         0.0, 25.0, CostKind.ENERGY)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from acceptance_report import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
