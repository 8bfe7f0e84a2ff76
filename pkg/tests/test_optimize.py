import dataclasses

import numpy as np
import pytest

from ccdlqr.errors import CCDError, NotStabilizable, OptimizationAborted
from ccdlqr.optimize import (HoverPower, InequalityConstraint, OptProblem, PipelineObjective,
                             hover_power_constraint, linear_constraints, minimize,
                             minimize_hover_power, pareto_sweep, projected_gradient_norm)
from ccdlqr.pipeline import analyze, central_difference, relative_error

CART_LO, CART_HI = [0.5, 2.5, 1.0], [2.0, 7.5, 2.0]
QUAD_LO, QUAD_HI = [-0.5, -0.5], [0.8, 0.8]


def quadratic(target):
    target = np.asarray(target, float)
    return lambda d: (float(np.sum((d - target) ** 2)), 2.0 * (d - target))


def test_unconstrained_quadratic():
    target = np.array([0.3, -1.2, 2.0, 0.7])
    prob = OptProblem(d0=np.zeros(4), lower=-10.0, upper=10.0, objective=quadratic(target))
    hist = minimize(prob, tol_kkt=1e-10)
    assert hist.success
    assert len(hist.records) <= 30
    np.testing.assert_allclose(hist.d, target, atol=1e-8)


def test_bound_active_quadratic():
    prob = OptProblem(d0=[0.5, 0.5], lower=[0.0, 0.0], upper=[1.0, 1.0],
                      objective=quadratic([2.0, -3.0]))
    hist = minimize(prob)
    np.testing.assert_array_equal(hist.d, [1.0, 0.0])
    assert hist.success


def test_linear_constraint_quadratic():
    # min |d|^2 s.t. d0 + d1 >= 2 -> (1, 1) with multiplier 2 (scaled by f(d0))
    prob = OptProblem(d0=[3.0, 3.0], lower=-5.0, upper=5.0, objective=quadratic([0.0, 0.0]),
                      constraints=linear_constraints([[1.0, 1.0]], [2.0]))
    hist = minimize(prob, tol_kkt=1e-9)
    assert hist.success
    np.testing.assert_allclose(hist.d, [1.0, 1.0], atol=1e-8)
    assert hist.constraints[0] >= -1e-8
    assert hist.multipliers[0] == pytest.approx(2.0 / 18.0, rel=1e-6)


def test_nonlinear_constraint_starting_infeasible():
    # min -(d0 + d1) s.t. 1 - d0^2 - d1^2 >= 0 -> (1, 1)/sqrt 2
    con = InequalityConstraint(lambda d: (1.0 - d @ d, -2.0 * d), name="disk")
    prob = OptProblem(d0=[1.5, 1.5], lower=-2.0, upper=2.0,
                      objective=lambda d: (-float(d.sum()), -np.ones(2)), constraints=[con])
    hist = minimize(prob, tol_kkt=1e-8)
    assert hist.success
    np.testing.assert_allclose(hist.d, np.full(2, 1 / np.sqrt(2)), atol=1e-7)
    assert hist.constraints[0] >= -1e-8


def test_merit_monotone_within_outer_iterations():
    con = InequalityConstraint(lambda d: (1.0 - d @ d, -2.0 * d), name="disk")
    prob = OptProblem(d0=[0.1, -0.3], lower=-2.0, upper=2.0,
                      objective=lambda d: (float(d[0] ** 4 + (d[1] - 3) ** 2),
                                           np.array([4 * d[0] ** 3, 2 * (d[1] - 3)])),
                      constraints=[con])
    hist = minimize(prob)
    assert hist.success
    outers = sorted({r.outer for r in hist.records})
    assert len(outers) >= 2
    for o in outers:
        merits = [r.merit for r in hist.records if r.outer == o]
        assert all(b <= a for a, b in zip(merits, merits[1:]))


def test_failed_analysis_shrinks_step():
    # the "analysis" fails for d > 1.5, the optimum sits at 1.2
    def objective(d):
        if d[0] > 1.5:
            raise NotStabilizable("synthetic failure")
        return float((d[0] - 1.2) ** 2), np.array([2 * (d[0] - 1.2)])

    prob = OptProblem(d0=[0.0], lower=[0.0], upper=[100.0], objective=objective)
    hist = minimize(prob, tol_kkt=1e-10)
    assert hist.success
    assert hist.d[0] == pytest.approx(1.2, abs=1e-8)
    assert all(r.d[0] <= 1.5 for r in hist.records)


def test_failure_at_start_aborts():
    def objective(d):
        raise NotStabilizable("synthetic failure")

    prob = OptProblem(d0=[0.0], lower=[-1.0], upper=[1.0], objective=objective)
    with pytest.raises(OptimizationAborted) as exc:
        minimize(prob)
    assert exc.value.history.records == []


def test_problem_validation():
    with pytest.raises(ValueError):
        OptProblem(d0=[0.0], lower=[1.0], upper=[0.0], objective=quadratic([0.0]))
    with pytest.raises(ValueError):
        OptProblem(d0=[2.0], lower=[0.0], upper=[1.0], objective=quadratic([0.0]))


def test_projected_gradient_norm():
    assert projected_gradient_norm(np.array([0.0]), np.array([1.0]), [0.0], [1.0]) == 0.0
    assert projected_gradient_norm(np.array([0.5]), np.array([1.0]), [0.0], [1.0]) == 0.5


def cartpole_problem(setup, d0):
    return OptProblem(d0=d0, lower=CART_LO, upper=CART_HI, objective=PipelineObjective(setup),
                      constraints=linear_constraints([[1.0, 1.0, 0.0]], [3.5]),
                      names=("m", "M", "L"))


def test_cartpole_already_optimal_start(cartpole_setup):
    hist = minimize(cartpole_problem(cartpole_setup, [1.0, 2.5, 1.0]))
    assert hist.success
    assert hist.outer_iterations <= 2
    np.testing.assert_allclose(hist.d, [1.0, 2.5, 1.0], atol=1e-12)


def test_history_costs_are_exact(cartpole_setup):
    short = dataclasses.replace(cartpole_setup, n_t=300)
    hist = minimize(cartpole_problem(short, [1.2, 4.0, 1.5]), max_iter=1)
    assert hist.records
    for r in hist.records[::3]:
        assert analyze(short, r.d).cost == r.f
    assert np.all(hist.d >= CART_LO) and np.all(hist.d <= CART_HI)


@pytest.fixture(scope="module")
def power_minimum(quad_setup):
    hist = minimize_hover_power(quad_setup, [0.3, -0.2], QUAD_LO, QUAD_HI)
    assert hist.success
    return hist


def test_hover_power_minimum(power_minimum, quad_setup):
    np.testing.assert_allclose(power_minimum.d, 0.0, atol=1e-6)
    # at d = 0 each rotor turns at 500 rad/s: P = 4 k_P 500^3
    assert power_minimum.f == pytest.approx(4 * 2e-7 * 500.0**3, rel=1e-12)


def test_hover_power_constraint_values(power_minimum, quad_setup):
    power = HoverPower(quad_setup)
    P_min = power_minimum.f
    c0, _ = hover_power_constraint(power, power_minimum.d, 0.0, P_min)
    assert c0 == pytest.approx(0.0, abs=1e-12 * P_min)
    c3, _ = hover_power_constraint(power, power_minimum.d, 0.03, P_min)
    assert c3 == pytest.approx(0.03 * P_min, rel=1e-10)


@pytest.mark.parametrize("d", [[0.1, -0.2], [0.4, 0.5], [-0.3, 0.2]])
def test_hover_power_constraint_gradient(quad_setup, d):
    power = HoverPower(quad_setup)
    d = np.array(d)
    _, grad = hover_power_constraint(power, d, 0.02, 100.0)
    fd = central_difference(lambda v: hover_power_constraint(HoverPower(quad_setup), v, 0.02,
                                                             100.0)[0], d)
    assert np.max(relative_error(grad, fd)) < 1e-6


def test_eps_zero_minimize_stays_at_power_minimum(power_minimum, quad_setup):
    power = HoverPower(quad_setup)
    P_min = power_minimum.f
    con = InequalityConstraint(lambda d: hover_power_constraint(power, d, 0.0, P_min),
                               name="hover_power", scale=P_min)
    prob = OptProblem(d0=power_minimum.d, lower=QUAD_LO, upper=QUAD_HI,
                      objective=PipelineObjective(quad_setup), constraints=[con])
    hist = minimize(prob)
    np.testing.assert_allclose(hist.d, power_minimum.d, atol=1e-3)
    assert power(hist.d)[0] == pytest.approx(P_min, rel=1e-6)


@pytest.fixture(scope="module")
def sweep(power_minimum, quad_setup):
    return pareto_sweep(quad_setup, [0.0, 0.005, 0.01, 0.02, 0.03], np.zeros(2), QUAD_LO,
                        QUAD_HI, power_minimum.f, d_min=power_minimum.d)


def test_pareto_monotone(sweep, power_minimum):
    assert all(p.success for p in sweep)
    f = [p.f_lqr for p in sweep]
    P = [p.P_hover for p in sweep]
    assert all(b <= a + 1e-8 for a, b in zip(f, f[1:]))
    assert all(b >= a - 1e-8 for a, b in zip(P, P[1:]))
    for p in sweep:
        assert p.P_hover <= (1 + p.eps) * power_minimum.f + 1e-8
        assert np.all(p.d >= QUAD_LO) and np.all(p.d <= QUAD_HI)


def test_pareto_eps_zero_is_power_minimum(sweep, power_minimum, quad_setup):
    p0 = sweep[0]
    np.testing.assert_array_equal(p0.d, power_minimum.d)
    assert p0.f_lqr == pytest.approx(analyze(quad_setup, power_minimum.d).cost, rel=1e-12)


def test_single_point_sweep_is_minimize(sweep, power_minimum, quad_setup):
    single = pareto_sweep(quad_setup, [0.01], np.zeros(2), QUAD_LO, QUAD_HI, power_minimum.f)
    assert len(single) == 1
    assert single[0].f_lqr == pytest.approx(sweep[2].f_lqr, rel=1e-6)


def test_pareto_requires_sorted(quad_setup):
    with pytest.raises(ValueError):
        pareto_sweep(quad_setup, [0.02, 0.01], np.zeros(2), QUAD_LO, QUAD_HI, 100.0)


def test_pareto_records_failures(quad_setup, monkeypatch):
    import ccdlqr.optimize as opt

    def broken(problem, **kw):
        raise opt.OptimizationAborted("synthetic", None)

    monkeypatch.setattr(opt, "minimize", broken)
    pts = pareto_sweep(quad_setup, [0.01, 0.02], np.zeros(2), QUAD_LO, QUAD_HI, 100.0)
    assert [p.success for p in pts] == [False, False]
    assert all(isinstance(p.message, str) and p.message for p in pts)
    assert issubclass(opt.OptimizationAborted, CCDError)
