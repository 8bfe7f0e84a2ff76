"""End-to-end analysis chain (equilibrium -> ARE -> simulation -> cost) and FD checks."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adjoint import adjoint_gradient
from .cltraj import simulate
from .equilibrium import solve_equilibrium
from .riccati import solve_are


@dataclass
class AnalysisSetup:
    """Everything the analysis needs except the design vector."""

    plant: object
    weights: object
    x_hat: np.ndarray
    u_hat: np.ndarray
    dx0: np.ndarray
    dt: float = 0.01
    n_t: int = 1000
    eq_tol: float = 1e-12
    eq_max_iter: int = 50
    are_tol: float = 1e-10
    partition: object = None  # EquilibriumPartition; the plant's default when None


@dataclass
class Analysis:
    d: np.ndarray
    eq: object
    ric: object
    traj: object

    @property
    def cost(self):
        return self.traj.cost


def analyze(setup, d, theta0=None):
    """Run the analysis chain at design ``d`` and return every intermediate."""
    d = np.asarray(d, dtype=float)
    plant = setup.plant
    eq = solve_equilibrium(plant, setup.x_hat, setup.u_hat, d, theta0=theta0,
                           tol=setup.eq_tol, max_iter=setup.eq_max_iter,
                           partition=setup.partition)
    J = plant.jac_x(eq.x_tgt, eq.u_tgt, d)
    G = plant.jac_u(eq.x_tgt, eq.u_tgt, d)
    ric = solve_are(J, G, setup.weights, tol=setup.are_tol)
    traj = simulate(plant, eq, ric, d, setup.dx0, setup.dt, setup.n_t, setup.weights)
    return Analysis(d=d, eq=eq, ric=ric, traj=traj)


def cost_and_gradient(setup, d, theta0=None):
    """Cost and adjoint gradient at ``d``; returns ``(f, grad, analysis, bundle)``."""
    a = analyze(setup, d, theta0=theta0)
    bundle = adjoint_gradient(setup.plant, a.eq, a.ric, a.traj, setup.weights, d=a.d)
    return a.cost, bundle.grad, a, bundle


def central_difference(fun, x, rel_step=1e-5, threads=1):
    """Central-difference gradient with per-component step ``rel_step * (1 + |x_i|)``."""
    x = np.asarray(x, dtype=float)

    def component(i):
        h = rel_step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        return (fun(xp) - fun(xm)) / (2.0 * h)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return np.array(list(pool.map(component, range(x.size))))
    return np.array([component(i) for i in range(x.size)])


def fd_gradient(setup, d, rel_step=1e-5, threads=1):
    """Central FD of the full pipeline (equilibrium re-solved at each perturbed design)."""
    d = np.asarray(d, dtype=float)
    theta0 = analyze(setup, d).eq.theta
    return central_difference(lambda v: analyze(setup, v, theta0=theta0).cost, d,
                              rel_step=rel_step, threads=threads)


def relative_error(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.abs(b), 1e-300)


@dataclass
class GradCheck:
    names: tuple
    adjoint: np.ndarray
    fd: np.ndarray
    rel_error: np.ndarray
    cost: float

    @property
    def max_rel_error(self):
        return float(np.max(self.rel_error)) if self.rel_error.size else 0.0

    def table(self):
        rows = [f"{'variable':>12} {'adjoint':>22} {'finite diff':>22} {'rel. error':>11}"]
        for n, a, f, e in zip(self.names, self.adjoint, self.fd, self.rel_error):
            rows.append(f"{n:>12} {a:>22.12e} {f:>22.12e} {e:>11.3e}")
        return "\n".join(rows)

    def to_dict(self):
        return {
            "cost": self.cost,
            "max_rel_error": self.max_rel_error,
            "rows": [{"variable": n, "adjoint": float(a), "fd": float(f), "rel_error": float(e)}
                     for n, a, f, e in zip(self.names, self.adjoint, self.fd, self.rel_error)],
        }


def grad_check(setup, d, rel_step=1e-5, threads=1):
    f, grad, _, _ = cost_and_gradient(setup, d)
    fd = fd_gradient(setup, d, rel_step=rel_step, threads=threads)
    names = tuple(setup.plant.design_names) or tuple(f"d{i}" for i in range(len(grad)))
    return GradCheck(names=names, adjoint=grad, fd=fd, rel_error=relative_error(grad, fd),
                     cost=f)
