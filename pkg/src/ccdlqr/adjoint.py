"""Adjoint design gradient of the closed-loop LQR cost.

The coupled adjoint system is block triangular (closed loop -> Riccati ->
steady state), so it is solved in three sequential pieces:

1. a reverse sweep over the explicit-Euler steps for ``psi_cl``;
2. a Lyapunov equation on the closed-loop matrix for ``Psi_ARE``;
3. a small linear solve with the transposed reduced Jacobian for ``psi_nl``.

The total derivative then only needs partial derivatives with respect to
the design, with the Jacobian derivatives contracted against fixed seeds.

Conventions: ``psi_cl`` has shape ``(n_t + 1, n_x)`` aligned with
``traj.dx``; row 0 is unused and zero.  The closed-loop residual of step
``k`` is ``dx[k] - dx[k-1] - r(x_tgt + dx[k-1], u_tgt + W dx[k-1], d) dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibrium import reduced_jacobian
from .errors import SingularJacobian
from .riccati import solve_lyapunov


@dataclass
class AdjointBundle:
    psi_cl: np.ndarray
    Psi_ARE: np.ndarray
    psi_nl: np.ndarray
    grad: np.ndarray
    Jbar: np.ndarray
    Gbar: np.ndarray


@dataclass
class _Linearization:
    """Jacobians along the trajectory at steps 0..n_t-1."""

    J: np.ndarray
    G: np.ndarray


def _linearize(plant, eq, ric, traj, d):
    n = traj.n_t
    J = np.empty((n, plant.n_x, plant.n_x))
    G = np.empty((n, plant.n_x, plant.n_u))
    for k in range(n):
        x = eq.x_tgt + traj.dx[k]
        u = eq.u_tgt + ric.W @ traj.dx[k]
        J[k] = plant.jac_x(x, u, d)
        G[k] = plant.jac_u(x, u, d)
    return _Linearization(J, G)


def cost_partials(traj, ric, weights=None):
    """Partials of the trajectory cost.

    Returns
    -------
    df_ddx : ndarray, shape (n_t + 1, n_x)
        ``2 (Q + P^T G S^-T G^T P) dx_i dt``; row 0 is zero.
    df_dP : ndarray
        ``sum_i G (S^-T + S^-1) G^T P dx_i dx_i^T dt``
    df_dG : ndarray
        ``sum_i P dx_i dx_i^T P^T G (S^-1 + S^-T) dt``
    """
    weights = weights or ric.weights
    P, G = ric.P, ric.G_tgt
    Si = weights.S_inv
    M = weights.Q + P.T @ G @ Si.T @ G.T @ P
    df_ddx = 2.0 * (traj.dx @ M.T) * traj.dt
    df_ddx[0] = 0.0
    X = traj.dx[1:]
    outer = X.T @ X * traj.dt
    df_dP = G @ (Si.T + Si) @ G.T @ P @ outer
    df_dG = P @ outer @ P.T @ G @ (Si + Si.T)
    return df_ddx, df_dP, df_dG


def solve_closed_loop_adjoint(plant, eq, ric, traj, weights=None, lin=None, d=None):
    """Reverse sweep of the transposed lower-bidiagonal closed-loop system.

    ``psi[n] = -df/ddx[n]`` and
    ``psi[k] = -df/ddx[k] + (I + (J^(k) + G^(k) W)^T dt) psi[k+1]`` for ``k = n-1..1``,
    with ``J^(k)``, ``G^(k)`` evaluated at step ``k`` of the trajectory.
    """
    if lin is None:
        lin = _linearize(plant, eq, ric, traj, d)
    df_ddx, _, _ = cost_partials(traj, ric, weights)
    n, dt, W = traj.n_t, traj.dt, ric.W
    psi = np.zeros_like(traj.dx)
    psi[n] = -df_ddx[n]
    for k in range(n - 1, 0, -1):
        A = lin.J[k] + lin.G[k] @ W
        psi[k] = -df_ddx[k] + psi[k + 1] + dt * (A.T @ psi[k + 1])
    return psi


def closed_loop_gain_seed(ric, traj, psi_cl, lin):
    """``psi_cl^T dr_cl/dW = -sum_k dt G^(k-1)^T psi^(k) dx^(k-1)^T``."""
    Gt_psi = np.einsum("kij,ki->kj", lin.G, psi_cl[1:])
    return -traj.dt * Gt_psi.T @ traj.dx[:-1]


def solve_are_adjoint(ric, rhs):
    """Solve ``Jt Psi + Psi Jt^T + (rhs + rhs^T)/2 = 0`` with ``Jt = J - G S^-1 G^T P``."""
    rhs = np.asarray(rhs, dtype=float)
    return solve_lyapunov(ric.closed_loop, 0.5 * (rhs + rhs.T))


def trace_seeds(ric, Psi):
    """Seeds ``(Jbar, Gbar)`` with ``d tr(Psi^T R_ARE) = tr(dJ^T Jbar) + tr(dG^T Gbar)``."""
    P, G = ric.P, ric.G_tgt
    Si = ric.weights.S_inv
    Jbar = P @ Psi.T + P.T @ Psi
    Gbar = -P.T @ Psi @ P.T @ G @ Si.T - P @ Psi.T @ P @ G @ Si
    return Jbar, Gbar


def _steady_sums(traj, psi_cl, lin):
    """``psi_cl^T dr_cl/dx_tgt`` and ``psi_cl^T dr_cl/du_tgt`` (direct dependence only)."""
    dt = traj.dt
    gx = -dt * np.einsum("kij,ki->j", lin.J, psi_cl[1:])
    gu = -dt * np.einsum("kij,ki->j", lin.G, psi_cl[1:])
    return gx, gu


def solve_steady_adjoint(plant, eq, ric, psi_cl, Psi_ARE, traj, weights=None, d=None,
                         lin=None, seeds=None):
    """Solve ``(dr_red/dtheta)^T psi_nl = -(total partial of the Lagrangian in theta)``.

    ``seeds`` are the combined target-Jacobian seeds; by default they are
    assembled by :func:`total_seeds`.
    """
    partition = eq.partition
    if partition.n_theta == 0:
        return np.zeros(0)
    if lin is None:
        lin = _linearize(plant, eq, ric, traj, d)
    if seeds is None:
        seeds = total_seeds(ric, traj, psi_cl, Psi_ARE, lin, weights)
    Jbar, Gbar = seeds
    gx, gu = _steady_sums(traj, psi_cl, lin)
    if partition.unknown_state_idx:
        gx = gx + plant.contract_jacobians(eq.x_tgt, eq.u_tgt, d, Jbar, Gbar, "x")
    if partition.unknown_control_idx:
        gu = gu + plant.contract_jacobians(eq.x_tgt, eq.u_tgt, d, Jbar, Gbar, "u")
    g_theta = partition.theta_of(gx, gu)
    A = reduced_jacobian(plant, eq.x_tgt, eq.u_tgt, d, partition)
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularJacobian("singular reduced Jacobian in steady-state adjoint", cond)
    return np.linalg.solve(A.T, -g_theta)


def total_seeds(ric, traj, psi_cl, Psi_ARE, lin, weights=None):
    """Seeds on ``(J_tgt, G_tgt)`` collecting every path through the target linearization.

    Besides the Riccati trace seeds, ``G_tgt`` also enters the cost weight and
    the gain ``W = -S^-1 G_tgt^T P`` used in the simulation.
    """
    weights = weights or ric.weights
    _, _, df_dG = cost_partials(traj, ric, weights)
    Jbar, Gbar = trace_seeds(ric, Psi_ARE)
    Wbar = closed_loop_gain_seed(ric, traj, psi_cl, lin)
    Gbar = Gbar + df_dG - ric.P @ Wbar.T @ weights.S_inv
    return Jbar, Gbar


def total_gradient(plant, eq, ric, traj, bundle, weights, d, lin=None):
    """Assemble ``df/dd`` from solved adjoints.

    ``df/dd = contract(Jbar, Gbar; d) + psi_nl^T dr_red/dd - sum_k dt (dr/dd)^(k-1)^T psi^(k)``
    where the cost's own design dependence (through ``G_tgt``) is carried by ``Gbar``.
    """
    if lin is None:
        lin = _linearize(plant, eq, ric, traj, d)
    grad = plant.contract_jacobians(eq.x_tgt, eq.u_tgt, d, bundle.Jbar, bundle.Gbar, "d")
    rows = list(eq.partition.residual_row_idx)
    if rows:
        grad = grad + plant.jac_d(eq.x_tgt, eq.u_tgt, d)[rows].T @ bundle.psi_nl
    dt, W = traj.dt, ric.W
    for k in range(1, traj.n_t + 1):
        prev = traj.dx[k - 1]
        Jd = plant.jac_d(eq.x_tgt + prev, eq.u_tgt + W @ prev, d)
        grad = grad - dt * (Jd.T @ bundle.psi_cl[k])
    return grad


def adjoint_gradient(plant, eq, ric, traj, weights=None, d=None):
    """Run all three adjoint solves and the total-derivative assembly."""
    weights = weights or ric.weights
    lin = _linearize(plant, eq, ric, traj, d)
    psi_cl = solve_closed_loop_adjoint(plant, eq, ric, traj, weights, lin=lin)
    _, df_dP, _ = cost_partials(traj, ric, weights)
    Wbar = closed_loop_gain_seed(ric, traj, psi_cl, lin)
    # psi_cl^T dr_cl/dP through W = -S^-1 G^T P
    rhs = df_dP - ric.G_tgt @ weights.S_inv.T @ Wbar
    Psi = solve_are_adjoint(ric, rhs)
    seeds = total_seeds(ric, traj, psi_cl, Psi, lin, weights)
    psi_nl = solve_steady_adjoint(plant, eq, ric, psi_cl, Psi, traj, weights, d=d, lin=lin,
                                  seeds=seeds)
    bundle = AdjointBundle(psi_cl=psi_cl, Psi_ARE=Psi, psi_nl=psi_nl,
                           grad=np.zeros(plant.n_d), Jbar=seeds[0], Gbar=seeds[1])
    bundle.grad = total_gradient(plant, eq, ric, traj, bundle, weights, d, lin=lin)
    return bundle
