"""Closed-loop explicit-Euler simulation and the LQR trajectory cost."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergedTrajectory, DomainError


@dataclass
class Trajectory:
    """Perturbation states ``dx[0..n_t]`` about the target point.

    ``dx[0]`` is the initial perturbation; the cost sums over ``dx[1:]``.
    """

    dx: np.ndarray
    dt: float
    n_t: int
    cost: float = float("nan")

    @property
    def times(self):
        return self.dt * np.arange(self.n_t + 1)


def cost_weight(ric, weights):
    """``Q + P^T G S^-T G^T P``, the per-step quadratic weight (equal to ``Q + W^T S W``)."""
    P, G = ric.P, ric.G_tgt
    return weights.Q + P.T @ G @ weights.S_inv.T @ G.T @ P


def lqr_cost(traj, ric, weights=None):
    """``sum_{i=1}^{n_t} dx_i^T (Q + P^T G S^-T G^T P) dx_i dt``; the initial state is excluded."""
    weights = weights or ric.weights
    X = traj.dx[1:]
    M = cost_weight(ric, weights)
    return float(np.einsum("ij,jk,ik->", X, M, X) * traj.dt)


def simulate(plant, eq, ric, d, dx0, dt=0.01, n_t=1000, weights=None):
    """Integrate the nonlinear plant under the frozen LQR gain by explicit Euler.

    ``dx[k] = dx[k-1] + r(x_tgt + dx[k-1], u_tgt + W dx[k-1], d) * dt``

    Raises
    ------
    DivergedTrajectory
        A state became non-finite (or left the plant's domain) at some step.
    """
    if not dt > 0 or int(n_t) < 1:
        raise ConfigError(f"need dt > 0 and n_t >= 1, got dt={dt}, n_t={n_t}")
    n_t = int(n_t)
    dx0 = np.asarray(dx0, dtype=float).reshape(-1)
    if dx0.shape != (plant.n_x,):
        raise ConfigError(f"dx0 must have length {plant.n_x}")
    W = ric.W
    x_tgt, u_tgt = eq.x_tgt, eq.u_tgt
    dx = np.empty((n_t + 1, plant.n_x))
    dx[0] = dx0
    for k in range(1, n_t + 1):
        prev = dx[k - 1]
        try:
            rate = plant.residual(x_tgt + prev, u_tgt + W @ prev, d)
        except DomainError:
            raise DivergedTrajectory(k) from None
        dx[k] = prev + rate * dt
        if not np.all(np.isfinite(dx[k])):
            raise DivergedTrajectory(k)
    traj = Trajectory(dx=dx, dt=float(dt), n_t=n_t)
    traj.cost = lqr_cost(traj, ric, weights)
    return traj


def write_trajectory_csv(path, traj, W):
    """CSV ``step,t,dx_0..,du_0..`` with ``du = W dx``; floats use shortest round-trip repr."""
    n_x = traj.dx.shape[1]
    W = np.atleast_2d(W)
    du = traj.dx @ W.T
    header = (["step", "t"] + [f"dx_{i}" for i in range(n_x)]
              + [f"du_{j}" for j in range(du.shape[1])])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(traj.n_t + 1):
            w.writerow([k, repr(float(k * traj.dt))]
                       + [repr(float(v)) for v in traj.dx[k]]
                       + [repr(float(v)) for v in du[k]])
