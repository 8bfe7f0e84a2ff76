import csv
import math

import numpy as np
import pytest

from ccdlqr.cltraj import Trajectory, cost_weight, lqr_cost, simulate, write_trajectory_csv
from ccdlqr.dynsys import LinearPlant
from ccdlqr.equilibrium import solve_equilibrium
from ccdlqr.errors import ConfigError, DivergedTrajectory
from ccdlqr.riccati import CostWeights, RiccatiSolution, solve_are

SQ2 = math.sqrt(2.0)


def scalar_chain(q=1.0, s=1.0):
    plant = LinearPlant([[-1.0]], [[1.0]])
    w = CostWeights([[q]], [[s]])
    eq = solve_equilibrium(plant, [0.0], [0.0], [0.0])
    ric = solve_are(plant.jac_x([0.0], [0.0], [0.0]), plant.jac_u([0.0], [0.0], [0.0]), w)
    return plant, eq, ric, w


def test_zero_perturbation_stays_put():
    plant, eq, ric, w = scalar_chain()
    traj = simulate(plant, eq, ric, [0.0], [0.0], dt=0.01, n_t=50)
    assert np.all(traj.dx == 0.0) and traj.cost == 0.0


def test_one_euler_step():
    plant, eq, ric, w = scalar_chain()
    traj = simulate(plant, eq, ric, [0.0], [1.0], dt=0.01, n_t=1)
    assert traj.dx[1, 0] == pytest.approx(1.0 - SQ2 * 0.01, abs=1e-12)
    assert round(traj.dx[1, 0], 8) == 0.98585786


def test_exact_flow_at_unit_time():
    plant, eq, ric, w = scalar_chain()
    traj = simulate(plant, eq, ric, [0.0], [1.0], dt=1e-4, n_t=10000)
    assert math.exp(-SQ2) == pytest.approx(0.2431167, abs=5e-8)
    assert abs(traj.dx[-1, 0] - 0.2431167) < 5e-4


def test_euler_convergence_order():
    plant, eq, ric, w = scalar_chain()
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        n = int(round(1.0 / dt))
        traj = simulate(plant, eq, ric, [0.0], [1.0], dt=dt, n_t=n)
        errs.append(abs(traj.dx[-1, 0] - math.exp(-SQ2)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 1.0) <= 0.1)


def test_cost_formula_direct():
    # single step, dx_1 = e_1, Q = I, G = 0, dt = 0.1 -> 0.1
    w = CostWeights(np.eye(2), np.eye(1))
    ric = RiccatiSolution(P=np.eye(2), W=np.zeros((1, 2)), J_tgt=-np.eye(2),
                          G_tgt=np.zeros((2, 1)), residual_norm=0.0, weights=w)
    traj = Trajectory(dx=np.array([[5.0, 5.0], [1.0, 0.0]]), dt=0.1, n_t=1)
    assert lqr_cost(traj, ric, w) == pytest.approx(0.1, rel=1e-15)
    traj0 = Trajectory(dx=np.zeros((4, 2)), dt=0.1, n_t=3)
    assert lqr_cost(traj0, ric, w) == 0.0


def test_cost_scalar_summation():
    plant, eq, ric, w = scalar_chain(q=0.1)
    P = ric.P[0, 0]
    assert cost_weight(ric, w)[0, 0] == pytest.approx(0.1 + P * P, rel=1e-12)
    traj = simulate(plant, eq, ric, [0.0], [0.7], dt=0.02, n_t=40, weights=w)
    direct = sum((0.1 + P * P) * traj.dx[i, 0] ** 2 * 0.02 for i in range(1, 41))
    assert traj.cost == pytest.approx(direct, rel=1e-13)
    # the initial state is excluded from the sum
    assert traj.cost == pytest.approx(lqr_cost(traj, ric, w), rel=0)


def test_trajectory_shape_and_determinism(cartpole_setup):
    s = cartpole_setup
    d = s.plant.baseline
    eq = solve_equilibrium(s.plant, s.x_hat, s.u_hat, d)
    ric = solve_are(s.plant.jac_x(eq.x_tgt, eq.u_tgt, d), s.plant.jac_u(eq.x_tgt, eq.u_tgt, d),
                    s.weights)
    a = simulate(s.plant, eq, ric, d, s.dx0, dt=0.01, n_t=200, weights=s.weights)
    b = simulate(s.plant, eq, ric, d, s.dx0, dt=0.01, n_t=200, weights=s.weights)
    assert a.dx.shape == (201, 4)
    assert np.array_equal(a.dx[0], s.dx0)
    assert a.cost == b.cost and np.array_equal(a.dx, b.dx)
    assert a.cost == lqr_cost(a, ric, s.weights)
    costs = [simulate(s.plant, eq, ric, d, s.dx0, 0.01, n, s.weights).cost for n in (10, 50, 200)]
    assert costs[0] >= 0 and costs[0] <= costs[1] <= costs[2]


def test_divergence_reported():
    # an unstable closed loop with an enormous step overflows quickly
    plant = LinearPlant([[50.0]], [[0.0]])
    eq = solve_equilibrium(plant, [0.0], [0.0], [0.0])
    w = CostWeights([[1.0]], [[1.0]])
    ric = RiccatiSolution(P=np.eye(1), W=np.zeros((1, 1)), J_tgt=np.array([[50.0]]),
                          G_tgt=np.zeros((1, 1)), residual_norm=0.0, weights=w)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergedTrajectory) as exc:
            simulate(plant, eq, ric, [0.0], [1.0], dt=10.0, n_t=1000)
    assert 1 <= exc.value.step <= 1000


@pytest.mark.parametrize("dt,n_t,dx0", [(0.0, 10, [1.0]), (0.1, 0, [1.0]), (0.1, 5, [1.0, 2.0])])
def test_bad_settings(dt, n_t, dx0):
    plant, eq, ric, w = scalar_chain()
    with pytest.raises(ConfigError):
        simulate(plant, eq, ric, [0.0], dx0, dt=dt, n_t=n_t)


def test_csv_export(tmp_path):
    plant, eq, ric, w = scalar_chain()
    traj = simulate(plant, eq, ric, [0.0], [1.0], dt=0.1, n_t=3)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj, ric.W)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "t", "dx_0", "du_0"]
    assert len(rows) == 5
    for k, row in enumerate(rows[1:]):
        assert int(row[0]) == k
        assert float(row[2]) == traj.dx[k, 0]  # shortest repr round-trips exactly
        assert float(row[3]) == (ric.W @ traj.dx[k])[0]
