import math

import numpy as np
import pytest

from ccdlqr.dynsys import CartPole, LinearPlant, PlanarQuadrotor, PlantModel
from ccdlqr.equilibrium import EquilibriumPartition
from ccdlqr.pipeline import AnalysisSetup
from ccdlqr.riccati import CostWeights

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


class DampedPendulum(PlantModel):
    """Two-state nonlinear toy: ``theta'' = -a sin(theta) - b theta' + u``, d = [a, b]."""

    n_x, n_u, n_d = 2, 1, 2
    design_names = ("a", "b")
    partition = EquilibriumPartition.fully_known(2, 1)

    def residual(self, x, u, d):
        x, u, d = self._check(x, u, d)
        return np.array([x[1], -d[0] * np.sin(x[0]) - d[1] * x[1] + u[0]])

    def jac_x(self, x, u, d):
        x, u, d = self._check(x, u, d)
        return np.array([[0.0, 1.0], [-d[0] * np.cos(x[0]), -d[1]]])

    def jac_u(self, x, u, d):
        self._check(x, u, d)
        return np.array([[0.0], [1.0]])

    def jac_d(self, x, u, d):
        x, u, d = self._check(x, u, d)
        return np.array([[0.0, 0.0], [-np.sin(x[0]), -x[1]]])


@pytest.fixture(scope="session")
def cartpole_setup():
    cp = CartPole()
    x_tgt = np.array([0.0, 0.0, math.pi, 0.0])
    return AnalysisSetup(cp, CostWeights.scaled_identity(0.1, 1.0, 4, 1), x_tgt, np.zeros(1),
                         np.array([-1.0, 0.0, 2.0, 0.0]) - x_tgt, dt=0.01, n_t=1000)


@pytest.fixture(scope="session")
def quad_setup():
    q = PlanarQuadrotor()
    return AnalysisSetup(q, CostWeights.scaled_identity(1.0, 0.01, 6, 2), np.zeros(6),
                         np.zeros(0), np.array([1.0, 1.0, 0.1, 0.5, 0.3, 0.05]),
                         dt=0.01, n_t=1000)


@pytest.fixture
def scalar_plant():
    """``xdot = -x + u`` with a design that scales the drift: ``a = -1 + d``."""
    return LinearPlant([[-1.0]], [[1.0]], A_d=[[[1.0]]])
