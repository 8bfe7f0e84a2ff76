"""Continuous-time LQR synthesis: dense Lyapunov solver, CARE via Kleinman-Newton."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ConfigError, LyapunovSingular, NoConvergence, NotStabilizable

logger = logging.getLogger(__name__)

HURWITZ_MARGIN = 1e-10


@dataclass(frozen=True)
class CostWeights:
    """State weight ``Q`` (symmetric PSD) and control weight ``S`` (symmetric PD)."""

    Q: np.ndarray
    S: np.ndarray

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "S", S)
        for name, A in (("Q", Q), ("S", S)):
            if A.ndim != 2 or A.shape[0] != A.shape[1]:
                raise ConfigError(f"{name} must be square, got shape {A.shape}")
            if not np.allclose(A, A.T, rtol=0, atol=1e-12 * (1 + np.abs(A).max())):
                raise ConfigError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * (1 + np.abs(Q).max()):
            raise ConfigError("Q must be positive semi-definite")
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError:
            raise ConfigError("S must be positive definite") from None

    @classmethod
    def scaled_identity(cls, q, s, n_x, n_u):
        return cls(q * np.eye(n_x), s * np.eye(n_u))

    @property
    def S_inv(self):
        return np.linalg.inv(self.S)


@dataclass
class RiccatiSolution:
    P: np.ndarray
    W: np.ndarray
    J_tgt: np.ndarray
    G_tgt: np.ndarray
    residual_norm: float
    weights: CostWeights
    iterations: int = 0

    @property
    def closed_loop(self):
        """``J_tgt + G_tgt W``, identical to ``J_tgt - G_tgt S^-1 G_tgt^T P``."""
        return self.J_tgt + self.G_tgt @ self.W

    @property
    def eigenvalues(self):
        return np.linalg.eigvals(self.closed_loop)


def solve_lyapunov(A, C):
    """Solve ``A X + X A^T + C = 0`` through the Kronecker-vectorized system.

    ``(I kron A + A kron I) vec(X) = -vec(C)`` with column-major ``vec``.
    Dense and O(n^6); meant for n up to a few tens.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    eye = np.eye(n)
    lam = np.linalg.eigvals(A)
    gap = np.min(np.abs(lam[:, None] + lam[None, :]))
    if gap <= 1e-13 * max(1.0, np.max(np.abs(lam))):
        raise LyapunovSingular(f"A and -A share an eigenvalue (gap {gap:.2e})")
    K = np.kron(eye, A) + np.kron(A, eye)
    try:
        x = np.linalg.solve(K, -C.reshape(-1, order="F"))
    except np.linalg.LinAlgError:
        raise LyapunovSingular("singular Kronecker system") from None
    return x.reshape(n, n, order="F")


def are_residual(P, J, G, weights):
    return J.T @ P + P @ J - P @ G @ weights.S_inv @ G.T @ P + weights.Q


def feedback_gain(P, G_tgt, S):
    """LQR gain ``W = -S^-1 G_tgt^T P``."""
    return -np.linalg.solve(np.atleast_2d(S), np.asarray(G_tgt).T @ P)


def is_hurwitz(A, margin=HURWITZ_MARGIN):
    return bool(np.max(np.linalg.eigvals(A).real) < -margin)


def _stabilizing_seed(J, G, weights, t_max=1e6):
    """Integrate the Riccati flow dP/dt = R_ARE(P) from P = Q until the gain stabilizes."""
    n = J.shape[0]
    S = weights.S

    def gain_abscissa(P):
        return np.max(np.linalg.eigvals(J + G @ feedback_gain(P, G, S)).real)

    P0 = weights.Q.copy()
    if gain_abscissa(P0) < -HURWITZ_MARGIN:
        return P0

    def rhs(_, p):
        P = p.reshape(n, n)
        P = 0.5 * (P + P.T)
        return are_residual(P, J, G, weights).ravel()

    def stabilized(_, p):
        # stop a little inside the stable half-plane so Kleinman starts robustly
        return gain_abscissa(p.reshape(n, n)) + 1e-6

    stabilized.terminal = True
    stabilized.direction = -1
    # an unstabilizable pair makes the flow blow up; that is reported below, not warned
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(rhs, (0.0, t_max), P0.ravel(), method="RK45", events=stabilized,
                        rtol=1e-6, atol=1e-9)
    if sol.status != 1:
        raise NotStabilizable("Riccati flow did not produce a stabilizing gain")
    P = sol.y_events[0][0].reshape(n, n)
    # The event point is only marginally stable; flowing as long again moves the
    # seed toward the stabilizing solution and keeps Kleinman's first step tame.
    t_hit = sol.t_events[0][0]
    more = solve_ivp(rhs, (t_hit, 2.0 * t_hit + 1.0), P.ravel(), method="RK45",
                     rtol=1e-6, atol=1e-9)
    if more.success:
        P_more = more.y[:, -1].reshape(n, n)
        if gain_abscissa(P_more) < gain_abscissa(P):
            P = P_more
    return 0.5 * (P + P.T)


def solve_are(J_tgt, G_tgt, weights, tol=1e-10, max_iter=50):
    """Stabilizing solution of ``J^T P + P J - P G S^-1 G^T P + Q = 0``.

    A stabilizing gain is seeded by the Riccati flow, then refined by
    Kleinman-Newton: each step solves a Lyapunov equation for the current
    closed loop.

    Raises
    ------
    NotStabilizable
        No stabilizing seed, or a Kleinman iterate lost stability.
    NoConvergence
        Residual above ``tol`` after ``max_iter`` steps.
    """
    J = np.atleast_2d(np.asarray(J_tgt, dtype=float))
    G = np.asarray(G_tgt, dtype=float).reshape(J.shape[0], -1)
    S = weights.S
    P = _stabilizing_seed(J, G, weights)
    W = feedback_gain(P, G, S)
    prev = np.inf
    for it in range(1, max_iter + 1):
        A = J + G @ W
        if not is_hurwitz(A, margin=0.0):
            raise NotStabilizable(f"Kleinman iterate {it} is not stabilizing")
        # Kleinman step in correction form: A^T X + X A + R_ARE(P) = 0, P <- P + X.
        # Identical to solving A^T P+ + P+ A = -(Q + W^T S W), but the small
        # correction keeps full relative accuracy when P is large.
        X = solve_lyapunov(A.T, are_residual(P, J, G, weights))
        X = 0.5 * (X + X.T)
        change = np.linalg.norm(X)
        P = P + X
        W = feedback_gain(P, G, S)
        logger.debug("kleinman %d: |dP|=%.3e", it, change)
        # converged, or stalled at roundoff after the quadratic phase
        scale = 1.0 + np.linalg.norm(P)
        if change <= 1e-14 * scale or (change <= 1e-9 * scale and change > 0.5 * prev):
            break
        prev = change
    res = float(np.linalg.norm(are_residual(P, J, G, weights)))
    if res > tol:
        raise NoConvergence("Kleinman-Newton did not reach the ARE tolerance", best=P, norm=res)
    if not is_hurwitz(J + G @ W):
        raise NotStabilizable("ARE solution does not stabilize the closed loop")
    return RiccatiSolution(P=P, W=W, J_tgt=J, G_tgt=G, residual_norm=res, weights=weights,
                           iterations=it)
