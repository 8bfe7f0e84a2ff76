"""Bound- and inequality-constrained design optimization with adjoint gradients.

Augmented Lagrangian (PHR) outer loop over general inequalities ``c(d) >= 0``
and a projected BFGS inner loop that keeps the bounds satisfied exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls

from .equilibrium import reduced_jacobian, solve_equilibrium
from .errors import CCDError, OptimizationAborted
from .pipeline import cost_and_gradient

logger = logging.getLogger(__name__)


@dataclass
class InequalityConstraint:
    """``fun(d) -> (value, gradient)`` with feasibility meaning ``value >= 0``.

    ``scale`` divides the value inside the merit function only.
    """

    fun: Callable
    name: str = "c"
    scale: float = 1.0
    linear: bool = False

    def __call__(self, d):
        return self.fun(d)


def linear_constraints(A, b, names=None):
    """Rows of ``A d >= b`` as :class:`InequalityConstraint` objects."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).reshape(-1)
    names = names or [f"lin{i}" for i in range(len(b))]
    return [InequalityConstraint(lambda d, a=a, bi=bi: (float(a @ d - bi), a.copy()),
                                 name=n, linear=True)
            for a, bi, n in zip(A, b, names)]


class PipelineObjective:
    """LQR trajectory cost and adjoint gradient, warm-starting each equilibrium solve."""

    def __init__(self, setup):
        self.setup = setup
        self.theta = None
        self.last = None

    def __call__(self, d):
        f, g, analysis, _ = cost_and_gradient(self.setup, d, theta0=self.theta)
        self.theta = analysis.eq.theta
        self.last = analysis
        return f, g


@dataclass
class OptProblem:
    d0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    objective: Callable
    constraints: list = field(default_factory=list)
    names: tuple = ()

    def __post_init__(self):
        self.d0 = np.asarray(self.d0, dtype=float)
        n = self.d0.size
        self.lower = np.broadcast_to(np.asarray(self.lower, float), (n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, float), (n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.d0 < self.lower) or np.any(self.d0 > self.upper):
            raise ValueError("initial design violates the bounds")

    def project(self, d):
        return np.clip(d, self.lower, self.upper)


@dataclass
class IterRecord:
    outer: int
    inner: int
    d: list
    f: float
    constraints: list
    kkt: float
    merit: float
    step: float
    multipliers: list
    penalty: float


@dataclass
class OptHistory:
    records: list = field(default_factory=list)
    reason: str = ""
    success: bool = False
    d: np.ndarray = None
    f: float = float("nan")
    constraints: np.ndarray = None
    multipliers: np.ndarray = None
    kkt: float = float("nan")
    outer_iterations: int = 0
    evaluations: int = 0

    def summary(self, names=()):
        names = list(names) or [f"d{i}" for i in range(len(self.d))]
        return {
            "success": self.success,
            "reason": self.reason,
            "design": {n: float(v) for n, v in zip(names, self.d)},
            "f": float(self.f),
            "constraints": [float(c) for c in self.constraints],
            "multipliers": [float(m) for m in self.multipliers],
            "kkt": float(self.kkt),
            "outer_iterations": self.outer_iterations,
            "iterations": len(self.records),
            "evaluations": self.evaluations,
        }


def projected_gradient_norm(d, g, lower, upper):
    return float(np.max(np.abs(d - np.clip(d - g, lower, upper)), initial=0.0))


class _Evaluator:
    """Objective and constraints at a point, counted and cached."""

    def __init__(self, problem):
        self.p = problem
        self.count = 0
        self._cache = {}

    def __call__(self, d):
        key = d.tobytes()
        if key not in self._cache:
            self.count += 1
            f, g = self.p.objective(d.copy())
            cs = [c(d.copy()) for c in self.p.constraints]
            c = np.array([v for v, _ in cs], dtype=float)
            A = np.array([gr for _, gr in cs], dtype=float).reshape(len(cs), d.size)
            self._cache = {key: (float(f), np.asarray(g, float), c, A)}
        return self._cache[key]


def _merit(f, g, c, A, lam, rho, f_scale, c_scale):
    """PHR augmented Lagrangian in scaled units and its gradient."""
    cs = c / c_scale
    As = A / c_scale[:, None]
    val = f / f_scale
    grad = g / f_scale
    for i in range(len(c)):
        if cs[i] <= lam[i] / rho:
            val += -lam[i] * cs[i] + 0.5 * rho * cs[i] ** 2
            grad = grad + (rho * cs[i] - lam[i]) * As[i]
        else:
            val += -0.5 * lam[i] ** 2 / rho
    return val, grad


def _inner(problem, ev, d, lam, rho, f_scale, c_scale, tol, max_iter, history, outer):
    """Projected BFGS with Armijo search along the projection arc."""
    lo, hi = problem.lower, problem.upper
    f, g, c, A = ev(d)
    phi, gphi = _merit(f, g, c, A, lam, rho, f_scale, c_scale)
    n = d.size
    H = np.eye(n)
    scaled_first = False
    for it in range(max_iter):
        pg = projected_gradient_norm(d, gphi, lo, hi)
        if pg <= tol:
            return d, "converged"
        span = np.maximum(hi - lo, 1e-12)
        eps_act = np.minimum(1e-10 * (1 + np.abs(d)), 0.5 * span)
        active = ((d <= lo + eps_act) & (gphi > 0)) | ((d >= hi - eps_act) & (gphi < 0))
        free = ~active
        p = np.zeros(n)
        p[free] = -H[np.ix_(free, free)] @ gphi[free]
        if gphi @ p >= 0:
            H = np.eye(n)
            p = np.where(free, -gphi, 0.0)
        alpha = 1.0
        if not scaled_first:
            alpha = min(1.0, 0.1 * np.max(span) / max(np.linalg.norm(p), 1e-300))
        accepted = False
        for _ in range(40):
            trial = problem.project(d + alpha * p)
            if np.array_equal(trial, d):
                alpha *= 0.5
                continue
            try:
                ft, gt, ct, At = ev(trial)
            except CCDError as exc:
                logger.info("analysis failed at trial design (%s); shrinking step", exc)
                alpha *= 0.5
                continue
            phit, gphit = _merit(ft, gt, ct, At, lam, rho, f_scale, c_scale)
            if phit <= phi + 1e-4 * gphi @ (trial - d):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if pg <= 10 * tol:
                return d, "converged (line search stalled at tolerance)"
            return d, "line search failed"
        s = trial - d
        # curvature pairs only on the free variables; bound-held components of the
        # gradient change would otherwise pollute the free block of H
        y = np.where(free & (s != 0), gphit - gphi, 0.0)
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if not scaled_first:
                H = np.eye(n) * sy / (y @ y)
                scaled_first = True
            rho_b = 1.0 / sy
            V = np.eye(n) - rho_b * np.outer(s, y)
            H = V @ H @ V.T + rho_b * np.outer(s, s)
        d, f, g, c, A, phi, gphi = trial, ft, gt, ct, At, phit, gphit
        history.records.append(IterRecord(
            outer=outer, inner=it + 1, d=d.tolist(), f=f, constraints=c.tolist(),
            kkt=projected_gradient_norm(d, gphi, lo, hi), merit=float(phi),
            step=float(np.linalg.norm(s)), multipliers=lam.tolist(), penalty=rho))
    return d, "inner iteration limit"


def _lagrangian_kkt(problem, d, g, A, lam, f_scale, c_scale):
    gl = g / f_scale - (lam / c_scale) @ A if len(lam) else g / f_scale
    return projected_gradient_norm(d, gl, problem.lower, problem.upper)


def _initial_multipliers(problem, d, g, c, A, f_scale, c_scale, active_tol=1e-8, act=None):
    """Non-negative least-squares multipliers for constraints active at ``d``."""
    lam = np.zeros(len(c))
    if act is None:
        act = np.flatnonzero(np.abs(c) <= active_tol * np.maximum(1.0, c_scale))
    if act.size == 0:
        return lam
    lo, hi = problem.lower, problem.upper
    gs = g / f_scale
    at_bound = ((d <= lo) & (gs > 0)) | ((d >= hi) & (gs < 0))
    free = ~at_bound
    if not free.any():
        return lam
    M = (A[act] / c_scale[act, None])[:, free].T
    sol, _ = nnls(M, gs[free])
    lam[act] = sol
    return lam


def _polish(problem, ev, d, lam, ctol, max_iter=10):
    """Drive active constraints to zero with minimum-norm Newton corrections."""
    lo, hi = problem.lower, problem.upper
    for _ in range(max_iter):
        _, _, c, A = ev(d)
        act = np.flatnonzero((lam > 0) | (c < 0))
        if act.size == 0 or np.max(np.abs(c[act])) <= 0.1 * ctol:
            return d
        free = (d > lo) & (d < hi)
        if not free.any():
            return d
        Af = A[np.ix_(act, np.flatnonzero(free))]
        step = np.zeros(d.size)
        step[free] = -Af.T @ np.linalg.lstsq(Af @ Af.T, c[act], rcond=None)[0]
        d = problem.project(d + step)
    return d


def minimize(problem, tol_kkt=1e-6, max_iter=50, ctol=1e-8, inner_max_iter=200):
    """Solve ``min f(d)`` s.t. bounds and ``c_i(d) >= 0``.

    Parameters
    ----------
    problem : OptProblem
    tol_kkt : float
        Projected-gradient tolerance on the Lagrangian, objective scaled by ``|f(d0)|``.
    max_iter : int
        Outer (multiplier update) iteration cap.
    ctol : float
        Final absolute violation allowed for general inequalities.

    Returns
    -------
    OptHistory

    Raises
    ------
    OptimizationAborted
        The analysis fails at the initial design or no progress can be made.
    """
    ev = _Evaluator(problem)
    hist = OptHistory()
    d = problem.d0.copy()
    try:
        f0, g0, c0, A0 = ev(d)
    except CCDError as exc:
        raise OptimizationAborted(f"analysis failed at the initial design: {exc}", hist) from exc
    f_scale = max(abs(f0), 1e-12)
    c_scale = np.array([max(con.scale, 1e-300) for con in problem.constraints])
    lam = _initial_multipliers(problem, d, g0, c0, A0, f_scale, c_scale)
    rho = 10.0
    inner_tol = max(tol_kkt, 1e-3) if problem.constraints else tol_kkt
    prev_viol = np.inf
    reason = "outer iteration limit"
    def finalize(d, lam):
        # feasibility polish, then multipliers and KKT measured at the polished point
        d = _polish(problem, ev, d, lam, ctol)
        f, g, c, A = ev(d)
        if np.any(lam > 0):
            lam = _initial_multipliers(problem, d, g, c, A, f_scale, c_scale,
                                       act=np.flatnonzero(lam > 0))
        kkt = _lagrangian_kkt(problem, d, g, A, lam, f_scale, c_scale)
        viol = float(np.max(np.maximum(-c, 0.0), initial=0.0))
        return d, f, c, lam, kkt, viol

    final = None
    for outer in range(1, max_iter + 1):
        hist.outer_iterations = outer
        d, inner_reason = _inner(problem, ev, d, lam, rho, f_scale, c_scale, inner_tol,
                                 inner_max_iter, hist, outer)
        f, g, c, A = ev(d)
        cs = c / c_scale
        viol = float(np.max(np.maximum(-cs, 0.0), initial=0.0))
        # multiplier update (PHR) with a safeguard clip
        lam = np.clip(lam - rho * cs, 0.0, 1e8)
        kkt = _lagrangian_kkt(problem, d, g, A, lam, f_scale, c_scale)
        compl = float(np.max(np.abs(np.minimum(cs, lam)), initial=0.0))
        logger.info("outer %d: f=%.10g viol=%.2e kkt=%.2e rho=%g (%s)", outer, f, viol, kkt,
                    rho, inner_reason)
        if kkt <= tol_kkt and viol <= 1e-6 and compl <= 1e-6:
            try:
                cand = finalize(d, lam)
            except CCDError as exc:
                logger.info("feasibility polish failed: %s", exc)
                cand = None
            if cand is not None and cand[4] <= tol_kkt and cand[5] <= ctol:
                final, reason = cand, "converged"
                break
        if viol > 0.25 * prev_viol:
            rho = min(rho * 10.0, 1e10)
        prev_viol = viol
        inner_tol = max(tol_kkt, 0.1 * inner_tol)
    if final is None:
        try:
            final = finalize(d, lam)
        except CCDError as exc:
            raise OptimizationAborted(f"analysis failed at the final design: {exc}",
                                      hist) from exc
    hist.d, hist.f, hist.constraints, hist.multipliers, hist.kkt, viol = final
    hist.success = reason == "converged"
    hist.reason = reason if viol <= ctol else f"{reason}; constraint violation {viol:.2e}"
    hist.evaluations = ev.count
    return hist


# ---------------------------------------------------------------------------
# hover power and the epsilon-constraint sweep


class HoverPower:
    """Steady hover power ``P(u_tgt(d), d)`` and its total design gradient.

    The gradient adds the equilibrium adjoint term for ``u_tgt``'s dependence on ``d``.
    """

    def __init__(self, setup):
        self.setup = setup
        self.theta = None

    def equilibrium(self, d):
        s = self.setup
        eq = solve_equilibrium(s.plant, s.x_hat, s.u_hat, d, theta0=self.theta,
                               tol=s.eq_tol, max_iter=s.eq_max_iter, partition=s.partition)
        self.theta = eq.theta
        return eq

    def __call__(self, d, eq=None):
        plant = self.setup.plant
        d = np.asarray(d, dtype=float)
        if eq is None:
            eq = self.equilibrium(d)
        P, dP_du, dP_dd = plant.hover_power(eq.u_tgt, d)
        part = eq.partition
        grad = dP_dd.copy()
        if part.n_theta:
            dP_dtheta = part.theta_of(np.zeros(plant.n_x), dP_du)
            A = reduced_jacobian(plant, eq.x_tgt, eq.u_tgt, d, part)
            psi = np.linalg.solve(A.T, -dP_dtheta)
            rows = list(part.residual_row_idx)
            grad = grad + plant.jac_d(eq.x_tgt, eq.u_tgt, d)[rows].T @ psi
        return float(P), grad


def hover_power_constraint(power, d, eps, P_min):
    """``c = (1 + eps) P_min - P_hover(d)`` and its gradient (feasible when ``c >= 0``)."""
    P, grad = power(d)
    return (1.0 + eps) * P_min - P, -grad


def minimize_hover_power(setup, d0, lower, upper, tol_kkt=1e-8, max_iter=50):
    """Single-objective blade design for minimum hover power (the sequential baseline)."""
    power = HoverPower(setup)
    problem = OptProblem(d0=d0, lower=lower, upper=upper, objective=power,
                         names=tuple(setup.plant.design_names))
    return minimize(problem, tol_kkt=tol_kkt, max_iter=max_iter)


@dataclass
class ParetoPoint:
    eps: float
    f_lqr: float
    P_hover: float
    d: np.ndarray
    success: bool
    message: str = ""


def pareto_sweep(setup, eps_list, d0, lower, upper, P_min, d_min=None, tol_kkt=1e-6,
                 max_iter=50):
    """Epsilon-constraint sweep: minimize the LQR cost with ``P_hover <= (1 + eps) P_min``.

    Each point warm-starts from the previous optimum.  Failures are recorded
    and the sweep continues.

    With ``eps = 0`` and the minimum-power design ``d_min`` supplied, the
    feasible set is that single design (the constraint gradient vanishes
    there, so no multiplier method can settle it); the point is evaluated
    directly instead of optimized.
    """
    eps_list = [float(e) for e in eps_list]
    if eps_list != sorted(eps_list):
        raise ValueError("eps_list must be sorted ascending")
    power = HoverPower(setup)
    out = []
    d_start = np.asarray(d0, dtype=float)
    for eps in eps_list:
        if eps == 0.0 and d_min is not None:
            d_pt = np.asarray(d_min, dtype=float)
            try:
                f, _ = PipelineObjective(setup)(d_pt)
                P, _ = power(d_pt)
            except CCDError as exc:
                out.append(ParetoPoint(eps, float("nan"), float("nan"), d_pt.copy(), False,
                                       str(exc)))
                continue
            out.append(ParetoPoint(eps, f, P, d_pt.copy(), True,
                                   "minimum-power design (feasible set is a single point)"))
            d_start = d_pt.copy()
            continue
        con = InequalityConstraint(
            lambda d, eps=eps: hover_power_constraint(power, d, eps, P_min),
            name="hover_power", scale=P_min)
        problem = OptProblem(d0=d_start, lower=lower, upper=upper,
                             objective=PipelineObjective(setup), constraints=[con],
                             names=tuple(setup.plant.design_names))
        try:
            hist = minimize(problem, tol_kkt=tol_kkt, max_iter=max_iter)
        except (CCDError, np.linalg.LinAlgError) as exc:
            logger.warning("pareto point eps=%g failed: %s", eps, exc)
            out.append(ParetoPoint(eps, float("nan"), float("nan"), d_start.copy(), False,
                                   str(exc)))
            continue
        P, _ = power(hist.d)
        out.append(ParetoPoint(eps, hist.f, P, hist.d.copy(), hist.success, hist.reason))
        d_start = problem.project(hist.d)
    return out
