"""Steady-state (target point) solve for partially specified equilibria.

The target state and control are split into known components, fixed by the
user, and unknown components stacked into ``theta``.  A square subset of the
rows of the plant residual (``residual_row_idx``) is driven to zero by
Newton's method with step halving.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NoConvergence, SingularJacobian

logger = logging.getLogger(__name__)

_COND_LIMIT = 1e14


def _idx(values):
    return np.asarray(values, dtype=int).reshape(-1)


@dataclass(frozen=True)
class EquilibriumPartition:
    """Index bookkeeping for known/unknown target states and controls."""

    known_state_idx: tuple = ()
    unknown_state_idx: tuple = ()
    known_control_idx: tuple = ()
    unknown_control_idx: tuple = ()
    residual_row_idx: tuple = ()

    def __post_init__(self):
        for name in ("known_state_idx", "unknown_state_idx", "known_control_idx",
                     "unknown_control_idx", "residual_row_idx"):
            object.__setattr__(self, name, tuple(int(i) for i in getattr(self, name)))

    @classmethod
    def fully_known(cls, n_x, n_u):
        return cls(known_state_idx=range(n_x), known_control_idx=range(n_u))

    @property
    def n_theta(self):
        return len(self.unknown_state_idx) + len(self.unknown_control_idx)

    def validate(self, n_x, n_u):
        """Raise ConfigError unless the index sets partition the state and control."""
        for known, unknown, n, what in (
            (self.known_state_idx, self.unknown_state_idx, n_x, "state"),
            (self.known_control_idx, self.unknown_control_idx, n_u, "control"),
        ):
            joined = sorted(known + unknown)
            if joined != list(range(n)):
                raise ConfigError(
                    f"{what} indices {known} + {unknown} do not partition range({n})")
        rows = self.residual_row_idx
        if len(set(rows)) != len(rows) or any(r < 0 or r >= n_x for r in rows):
            raise ConfigError(f"residual_row_idx {rows} must be distinct rows in range({n_x})")
        if len(rows) != self.n_theta:
            raise ConfigError(
                f"reduced system is not square: {len(rows)} rows for {self.n_theta} unknowns")

    def assemble(self, theta, x_hat, u_hat, n_x, n_u):
        """Scatter (x_hat, theta) and (u_hat, theta) into full x_tgt, u_tgt."""
        theta = np.asarray(theta, dtype=float)
        nxu = len(self.unknown_state_idx)
        x = np.zeros(n_x)
        u = np.zeros(n_u)
        x[list(self.known_state_idx)] = np.asarray(x_hat, dtype=float)
        x[list(self.unknown_state_idx)] = theta[:nxu]
        u[list(self.known_control_idx)] = np.asarray(u_hat, dtype=float)
        u[list(self.unknown_control_idx)] = theta[nxu:]
        return x, u

    def theta_of(self, x, u):
        return np.concatenate([np.asarray(x, float)[list(self.unknown_state_idx)],
                               np.asarray(u, float)[list(self.unknown_control_idx)]])

    def known_of(self, x, u):
        return (np.asarray(x, float)[list(self.known_state_idx)],
                np.asarray(u, float)[list(self.known_control_idx)])


@dataclass
class EquilibriumSolution:
    theta: np.ndarray
    x_tgt: np.ndarray
    u_tgt: np.ndarray
    residual_norm: float
    partition: EquilibriumPartition
    iterations: int = 0
    x_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _rows(partition):
    return list(partition.residual_row_idx)


def reduced_jacobian(plant, x_tgt, u_tgt, d, partition=None):
    """Jacobian of the reduced residual with respect to ``theta``.

    Selects ``residual_row_idx`` rows of ``[jac_x[:, unknown_state] | jac_u[:, unknown_control]]``.
    """
    partition = partition or plant.partition
    rows = _rows(partition)
    if partition.n_theta == 0:
        return np.zeros((0, 0))
    Jx = plant.jac_x(x_tgt, u_tgt, d)[np.ix_(rows, list(partition.unknown_state_idx))]
    Ju = plant.jac_u(x_tgt, u_tgt, d)[np.ix_(rows, list(partition.unknown_control_idx))]
    return np.hstack([Jx, Ju])


def reduced_residual(plant, theta, x_hat, u_hat, d, partition=None):
    partition = partition or plant.partition
    x, u = partition.assemble(theta, x_hat, u_hat, plant.n_x, plant.n_u)
    return plant.residual(x, u, d)[_rows(partition)]


def _checked_solve(A, b, what):
    cond = np.linalg.cond(A) if A.size else 1.0
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularJacobian(f"singular {what}", cond)
    return np.linalg.solve(A, b)


def solve_equilibrium(plant, x_hat, u_hat, d, theta0=None, tol=1e-12, max_iter=50,
                      partition=None):
    """Solve the reduced steady-state equation for ``theta`` by damped Newton.

    Parameters
    ----------
    plant : PlantModel
    x_hat, u_hat : array_like
        Known target state and control components, ordered as in the partition.
    d : array_like
        Design vector.
    theta0 : array_like, optional
        Initial guess.  Falls back to ``plant.theta_guess`` and then to zeros.
    tol : float
        Absolute 2-norm tolerance on the reduced residual.
    max_iter : int
        Newton iteration cap.

    Returns
    -------
    EquilibriumSolution

    Raises
    ------
    SingularJacobian
        The reduced Jacobian is numerically singular at an iterate.
    NoConvergence
        ``max_iter`` reached; the exception carries the best iterate.
    """
    partition = partition or plant.partition
    partition.validate(plant.n_x, plant.n_u)
    d = np.asarray(d, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float).reshape(-1)
    u_hat = np.asarray(u_hat, dtype=float).reshape(-1)
    if theta0 is None:
        guess = getattr(plant, "theta_guess", None)
        theta0 = guess(x_hat, u_hat, d, partition) if guess else np.zeros(partition.n_theta)
    theta = np.asarray(theta0, dtype=float).reshape(-1).copy()
    if theta.shape != (partition.n_theta,) or not np.all(np.isfinite(theta)):
        raise ConfigError(f"theta0 must be a finite vector of length {partition.n_theta}")

    def finish(theta, norm, it):
        x, u = partition.assemble(theta, x_hat, u_hat, plant.n_x, plant.n_u)
        return EquilibriumSolution(theta=theta, x_tgt=x, u_tgt=u, residual_norm=norm,
                                   partition=partition, iterations=it,
                                   x_hat=x_hat, u_hat=u_hat)

    r = reduced_residual(plant, theta, x_hat, u_hat, d, partition)
    norm = float(np.linalg.norm(r))
    if partition.n_theta == 0:
        # Nothing to solve; report the residual of the fully specified point.
        x, u = partition.assemble(theta, x_hat, u_hat, plant.n_x, plant.n_u)
        return finish(theta, float(np.linalg.norm(plant.residual(x, u, d))), 0)

    for it in range(1, max_iter + 1):
        if norm <= tol:
            return finish(theta, norm, it - 1)
        x, u = partition.assemble(theta, x_hat, u_hat, plant.n_x, plant.n_u)
        step = _checked_solve(reduced_jacobian(plant, x, u, d, partition), -r,
                              "reduced steady-state Jacobian")
        alpha = 1.0
        for _ in range(21):
            trial = theta + alpha * step
            try:
                r_trial = reduced_residual(plant, trial, x_hat, u_hat, d, partition)
            except ValueError:
                r_trial = None
            # Armijo on 0.5 ||r||^2 along the Newton direction.
            if r_trial is not None and np.all(np.isfinite(r_trial)) and \
                    r_trial @ r_trial <= (1.0 - 1e-4 * alpha) * (r @ r):
                break
            alpha *= 0.5
        else:
            raise NoConvergence("Newton line search failed", best=finish(theta, norm, it), norm=norm)
        theta, r = trial, r_trial
        norm = float(np.linalg.norm(r))
        logger.debug("newton %d: |r|=%.3e alpha=%g", it, norm, alpha)
    if norm <= tol:
        return finish(theta, norm, max_iter)
    raise NoConvergence(f"equilibrium not converged in {max_iter} iterations",
                        best=finish(theta, norm, max_iter), norm=norm)
