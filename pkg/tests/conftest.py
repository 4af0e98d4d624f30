import math

import numpy as np
import pytest

from ottolab import measure, pde
from ottolab.potential import Perturbation, Potential

BUMP = Perturbation(0.0, 1.0, 0.2)


@pytest.fixture(scope="session")
def ou():
    return Potential.quadratic(0.25)


@pytest.fixture(scope="session")
def ou_normalized():
    return Potential.normalized_quadratic()


@pytest.fixture(scope="session")
def n12():
    return measure.gaussian(1.0, 2.0)


@pytest.fixture(scope="session")
def ou_flow(ou, n12):
    """OU flow from N(1, 2) on [0, 1], snapshots every 1e-3."""
    return pde.solve_forward(ou, n12, 0.0, 1.0, 1e-4, save_stride=10)


@pytest.fixture(scope="session")
def ou_flow_normalized(ou_normalized, n12):
    return pde.solve_forward(ou_normalized, n12, 0.0, 1.0, 1e-4, save_stride=10)


@pytest.fixture(scope="session")
def ou_pflow(ou, n12):
    return pde.solve_forward(ou, n12, 0.0, 1.0, 1e-4, pert=BUMP, save_stride=10)


@pytest.fixture(scope="session")
def heat_flow():
    d0 = measure.gaussian(0.0, 1.0, -12.0, 12.0, 2048)
    return pde.solve_forward(Potential.zero(), d0, 0.0, 1.0, 1e-4, save_stride=10)


@pytest.fixture(scope="session")
def stationary_flow(ou_normalized):
    d0 = measure.gibbs(ou_normalized)
    return pde.solve_forward(ou_normalized, d0, 0.0, 0.5, 1e-4, save_stride=10)


def gaussian_pdf(x, m, v):
    return np.exp(-0.5 * (x - m) ** 2 / v) / math.sqrt(2 * math.pi * v)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
