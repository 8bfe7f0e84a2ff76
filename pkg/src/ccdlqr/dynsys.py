"""Plant models: the residual contract and two built-in plants.

A plant supplies ``xdot = residual(x, u, d)`` together with its first
Jacobians and a contraction of the Jacobians' derivatives, which the
adjoint needs to differentiate the target-point linearization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import sympy as sp

from .equilibrium import EquilibriumPartition
from .errors import DomainError

FD_REL_STEP = 1e-6


def _vec(v, n, what):
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise DomainError(f"{what} must have length {n}, got {v.shape[0]}")
    if not np.isfinite(v).all():
        raise DomainError(f"non-finite {what}: {v}")
    return v


class PlantModel:
    """Base class for parametrized plants ``xdot = r(x, u, d)``.

    Subclasses set ``n_x``, ``n_u``, ``n_d`` and implement ``residual``,
    ``jac_x``, ``jac_u`` and ``jac_d``.  ``contract_jacobians`` defaults to
    central differences of the analytic Jacobians.
    """

    n_x: int
    n_u: int
    n_d: int
    design_names: tuple = ()
    partition: EquilibriumPartition

    def residual(self, x, u, d):
        raise NotImplementedError

    def jac_x(self, x, u, d):
        raise NotImplementedError

    def jac_u(self, x, u, d):
        raise NotImplementedError

    def jac_d(self, x, u, d):
        raise NotImplementedError

    def _check(self, x, u, d):
        return (_vec(x, self.n_x, "state"), _vec(u, self.n_u, "control"),
                _vec(d, self.n_d, "design"))

    def contract_jacobians(self, x, u, d, Jbar, Gbar, wrt):
        """Gradient of ``tr(J^T Jbar) + tr(G^T Gbar)`` with respect to ``wrt``.

        ``wrt`` is one of ``"x"``, ``"u"``, ``"d"``; the seeds are held fixed.
        """
        return self.contract_jacobians_fd(x, u, d, Jbar, Gbar, wrt)

    def contract_jacobians_fd(self, x, u, d, Jbar, Gbar, wrt):
        args = {"x": np.array(x, float), "u": np.array(u, float), "d": np.array(d, float)}
        if wrt not in args:
            raise ValueError(f"wrt must be 'x', 'u' or 'd', got {wrt!r}")
        v0 = args[wrt]
        Jbar = np.asarray(Jbar, float)
        Gbar = np.asarray(Gbar, float)

        def traced(v):
            a = dict(args)
            a[wrt] = v
            return (np.sum(self.jac_x(a["x"], a["u"], a["d"]) * Jbar)
                    + np.sum(self.jac_u(a["x"], a["u"], a["d"]) * Gbar))

        out = np.zeros(v0.size)
        for i in range(v0.size):
            h = FD_REL_STEP * (1.0 + abs(v0[i]))
            vp, vm = v0.copy(), v0.copy()
            vp[i] += h
            vm[i] -= h
            out[i] = (traced(vp) - traced(vm)) / (2.0 * h)
        return out

    def theta_guess(self, x_hat, u_hat, d, partition):
        return np.zeros(partition.n_theta)


# ---------------------------------------------------------------------------
# cart-pole


@dataclass(frozen=True)
class CartPole(PlantModel):
    """Dimensionless inverted pendulum on a cart, design ``d = [m, M, L]``.

    State ``[x, v, theta, omega]``, scalar force input.  ``m``, ``M``, ``L``
    hold the baseline design; the residual uses whatever ``d`` is passed.

    ``g`` is signed: with ``g = -10`` the point ``theta = pi`` is the upright
    (open-loop unstable) balance, the configuration the LQR is meant to hold.
    """

    m: float = 1.0
    M: float = 5.0
    L: float = 2.0
    g: float = -10.0
    delta: float = 0.0

    n_x = 4
    n_u = 1
    n_d = 3
    design_names = ("m", "M", "L")

    def __post_init__(self):
        if min(self.m, self.M, self.L) <= 0:
            raise DomainError("cart-pole m, M, L must be positive")

    @property
    def baseline(self):
        return np.array([self.m, self.M, self.L])

    @property
    def partition(self):
        return EquilibriumPartition.fully_known(self.n_x, self.n_u)

    def _call(self, name, x, u, d):
        x, u, d = self._check(x, u, d)
        if min(d) <= 0:
            raise DomainError(f"cart-pole design must be positive, got {d}")
        fn = _cartpole_functions()[name]
        return np.array(fn(*x, *u, *d, self.g, self.delta), dtype=float)

    def residual(self, x, u, d):
        return self._call("r", x, u, d).reshape(4)

    def jac_x(self, x, u, d):
        return self._call("J", x, u, d).reshape(4, 4)

    def jac_u(self, x, u, d):
        return self._call("G", x, u, d).reshape(4, 1)

    def jac_d(self, x, u, d):
        return self._call("Jd", x, u, d).reshape(4, 3)

    def contract_jacobians(self, x, u, d, Jbar, Gbar, wrt):
        # Exact second derivatives: sum_ij Jbar_ij dJ_ij/dv + Gbar_ij dG_ij/dv.
        if wrt not in ("x", "u", "d"):
            raise ValueError(f"wrt must be 'x', 'u' or 'd', got {wrt!r}")
        dJ = self._call("dJ_" + wrt, x, u, d).reshape(4, 4, -1)
        dG = self._call("dG_" + wrt, x, u, d).reshape(4, 1, -1)
        return (np.einsum("ij,ijk->k", np.asarray(Jbar, float), dJ)
                + np.einsum("ij,ijk->k", np.asarray(Gbar, float), dG))


@lru_cache(maxsize=None)
def _cartpole_functions():
    px, v, th, om, u, m, M, L, g, delta = sp.symbols("x v theta omega u m M L g delta",
                                                     real=True)
    den = m * L**2 * (M + m * (1 - sp.cos(th) ** 2))
    swing = m * L * om**2 * sp.sin(th) - delta * v
    r_nl = sp.Matrix([
        v,
        (-m**2 * L**2 * g * sp.cos(th) * sp.sin(th) + m * L**2 * swing) / den,
        om,
        ((m + M) * m * g * L * sp.sin(th) - m * L * sp.cos(th) * swing) / den,
    ])
    Gcol = sp.Matrix([0, L, 0, sp.cos(th)]) / (L * (M + m * (1 - sp.cos(th) ** 2)))
    rhs = r_nl + Gcol * u
    xs, us, ds = [px, v, th, om], [u], [m, M, L]
    J = rhs.jacobian(xs)
    G = rhs.jacobian(us)
    exprs = {"r": rhs, "J": J, "G": G, "Jd": rhs.jacobian(ds)}
    for name, syms in (("x", xs), ("u", us), ("d", ds)):
        exprs["dJ_" + name] = sp.Array([[[sp.diff(J[i, j], s) for s in syms]
                                         for j in range(4)] for i in range(4)])
        exprs["dG_" + name] = sp.Array([[[sp.diff(G[i, 0], s) for s in syms]]
                                        for i in range(4)])
    args = xs + us + ds + [g, delta]
    return {k: sp.lambdify(args, e, modules="numpy", cse=True) for k, e in exprs.items()}


# ---------------------------------------------------------------------------
# planar quadrotor


def thrust_coefficient(d, k_T):
    """c_T(d) and its design gradient."""
    d1, d2 = d
    return k_T * (1.0 + d1 + 0.5 * d2), k_T * np.array([1.0, 0.5])


def power_coefficient(d, k_P):
    """c_P(d) and its design gradient.

    The linear part matches the first-order growth of ``c_T**1.5`` so the
    hover power per unit thrust is stationary at ``d = 0``; the quadratic
    coupling makes that stationary point a strict minimum.
    """
    d1, d2 = d
    c = 1.0 + 1.5 * d1 + 0.75 * d2 + d1**2 + 0.5 * d2**2 - 0.5 * d1 * d2
    grad = np.array([1.5 + 2.0 * d1 - 0.5 * d2, 0.75 + d2 - 0.5 * d1])
    return k_P * c, k_P * grad


def thrust_model(omega, d, k_T):
    """Rotor thrust ``T = c_T(d) * omega**2``.

    Returns ``(T, dT/domega, dT/dd)``.
    """
    if omega < 0:
        raise DomainError(f"rotor speed must be non-negative, got {omega}")
    c, dc = thrust_coefficient(d, k_T)
    return c * omega**2, 2.0 * c * omega, dc * omega**2


def power_model(omega, d, k_P):
    """Rotor power ``P = c_P(d) * omega**3``; returns ``(P, dP/domega, dP/dd)``."""
    if omega < 0:
        raise DomainError(f"rotor speed must be non-negative, got {omega}")
    c, dc = power_coefficient(d, k_P)
    return c * omega**3, 3.0 * c * omega**2, dc * omega**3


@dataclass(frozen=True)
class PlanarQuadrotor(PlantModel):
    """Longitudinal quadrotor ``[x, y, theta, v_x, v_y, omega]`` with rotor speeds as inputs.

    Each of ``T_1`` and ``T_2`` acts on two rotors.  The blade design enters only
    through the thrust and power coefficients (see ``thrust_coefficient``).
    """

    m: float = 1.4
    I: float = 0.0211
    ell: float = 0.159
    beta: float = 0.1365
    g: float = 9.81
    # hover at 500 rad/s for d = 0: k_T = m g / (4 * 500**2)
    k_T: float = 1.4 * 9.81 / 4.0 / 500.0**2
    k_P: float = 2.0e-7

    n_x = 6
    n_u = 2
    n_d = 2
    design_names = ("d_thrust", "d_power")

    def __post_init__(self):
        if min(self.m, self.I, self.ell, self.beta, self.g, self.k_T, self.k_P) <= 0:
            raise DomainError("quadrotor constants must be positive")

    @property
    def baseline(self):
        return np.zeros(2)

    @property
    def partition(self):
        # hover: full state known, both rotor speeds unknown, solved from the v_y and omega rows
        return EquilibriumPartition(known_state_idx=range(6), unknown_control_idx=(0, 1),
                                    residual_row_idx=(4, 5))

    def theta_guess(self, x_hat, u_hat, d, partition):
        if partition.unknown_state_idx or len(partition.unknown_control_idx) != 2:
            return np.zeros(partition.n_theta)
        return np.full(2, np.sqrt(self.m * self.g / (4.0 * self.k_T)))

    def _rotors(self, u, d):
        T1, dT1, dT1d = thrust_model(u[0], d, self.k_T)
        T2, dT2, dT2d = thrust_model(u[1], d, self.k_T)
        return T1, T2, dT1, dT2, dT1d, dT2d

    def residual(self, x, u, d):
        x, u, d = self._check(x, u, d)
        _, _, th, vx, vy, om = x
        T1, T2, *_ = self._rotors(u, d)
        s = np.hypot(vx, vy)
        F = 2.0 * (T1 + T2)
        return np.array([
            vx,
            vy,
            om,
            (-F * np.sin(th) - self.beta * vx * s) / self.m,
            (F * np.cos(th) - self.beta * vy * s) / self.m - self.g,
            2.0 * (T1 - T2) * self.ell / self.I,
        ])

    def jac_x(self, x, u, d):
        x, u, d = self._check(x, u, d)
        _, _, th, vx, vy, om = x
        T1, T2, *_ = self._rotors(u, d)
        F = 2.0 * (T1 + T2)
        s = np.hypot(vx, vy)
        J = np.zeros((6, 6))
        J[0, 3] = J[1, 4] = J[2, 5] = 1.0
        J[3, 2] = -F * np.cos(th) / self.m
        J[4, 2] = -F * np.sin(th) / self.m
        if s > 0.0:
            b = self.beta / self.m
            J[3, 3] = -b * (s + vx * vx / s)
            J[3, 4] = J[4, 3] = -b * vx * vy / s
            J[4, 4] = -b * (s + vy * vy / s)
        return J

    def jac_u(self, x, u, d):
        x, u, d = self._check(x, u, d)
        th = x[2]
        _, _, dT1, dT2, _, _ = self._rotors(u, d)
        G = np.empty((6, 2))
        G[:3] = 0.0
        for j, dT in enumerate((dT1, dT2)):
            G[3, j] = -2.0 * np.sin(th) * dT / self.m
            G[4, j] = 2.0 * np.cos(th) * dT / self.m
        G[5, 0] = 2.0 * dT1 * self.ell / self.I
        G[5, 1] = -2.0 * dT2 * self.ell / self.I
        return G

    def jac_d(self, x, u, d):
        x, u, d = self._check(x, u, d)
        th = x[2]
        *_, dT1d, dT2d = self._rotors(u, d)
        Jd = np.zeros((6, 2))
        Jd[3] = -2.0 * np.sin(th) * (dT1d + dT2d) / self.m
        Jd[4] = 2.0 * np.cos(th) * (dT1d + dT2d) / self.m
        Jd[5] = 2.0 * (dT1d - dT2d) * self.ell / self.I
        return Jd

    def hover_thrust(self):
        return self.m * self.g / 4.0

    def hover_power(self, u, d):
        """Total hover power of the four rotors with its ``u`` and ``d`` gradients."""
        u = _vec(u, 2, "control")
        d = _vec(d, 2, "design")
        P1, dP1, dP1d = power_model(u[0], d, self.k_P)
        P2, dP2, dP2d = power_model(u[1], d, self.k_P)
        return 2.0 * (P1 + P2), 2.0 * np.array([dP1, dP2]), 2.0 * (dP1d + dP2d)


# ---------------------------------------------------------------------------
# linear plant


class LinearPlant(PlantModel):
    """``xdot = (A0 + sum_i d_i A_i) x + (B0 + sum_i d_i B_i) u``.

    Useful as an exactly solvable test plant.  With no design matrices
    given, ``n_d = 1`` and the design has no effect.
    """

    def __init__(self, A0, B0, A_d=None, B_d=None):
        self.A0 = np.atleast_2d(np.asarray(A0, dtype=float))
        self.n_x = self.A0.shape[0]
        self.B0 = np.asarray(B0, dtype=float).reshape(self.n_x, -1)
        self.n_u = self.B0.shape[1]
        if A_d is None and B_d is None:
            A_d = np.zeros((1, self.n_x, self.n_x))
        n_d = len(A_d) if A_d is not None else len(B_d)
        self.A_d = (np.zeros((n_d, self.n_x, self.n_x)) if A_d is None
                    else np.asarray(A_d, dtype=float).reshape(n_d, self.n_x, self.n_x))
        self.B_d = (np.zeros((n_d, self.n_x, self.n_u)) if B_d is None
                    else np.asarray(B_d, dtype=float).reshape(n_d, self.n_x, self.n_u))
        self.n_d = n_d
        self.design_names = tuple(f"d{i}" for i in range(n_d))
        self.partition = EquilibriumPartition.fully_known(self.n_x, self.n_u)

    def matrices(self, d):
        d = _vec(d, self.n_d, "design")
        return (self.A0 + np.tensordot(d, self.A_d, axes=1),
                self.B0 + np.tensordot(d, self.B_d, axes=1))

    def residual(self, x, u, d):
        x, u, d = self._check(x, u, d)
        A, B = self.matrices(d)
        return A @ x + B @ u

    def jac_x(self, x, u, d):
        self._check(x, u, d)
        return self.matrices(d)[0]

    def jac_u(self, x, u, d):
        self._check(x, u, d)
        return self.matrices(d)[1]

    def jac_d(self, x, u, d):
        x, u, d = self._check(x, u, d)
        return (self.A_d @ x + self.B_d @ u).T

    def contract_jacobians(self, x, u, d, Jbar, Gbar, wrt):
        if wrt in ("x", "u"):
            return np.zeros(self.n_x if wrt == "x" else self.n_u)
        if wrt != "d":
            raise ValueError(f"wrt must be 'x', 'u' or 'd', got {wrt!r}")
        return (np.einsum("kij,ij->k", self.A_d, np.asarray(Jbar, float))
                + np.einsum("kij,ij->k", self.B_d, np.asarray(Gbar, float)))


PLANTS = {"cartpole": CartPole, "quadrotor": PlanarQuadrotor}


def make_plant(name, **params):
    try:
        cls = PLANTS[name]
    except KeyError:
        raise DomainError(f"unknown plant {name!r}; choose from {sorted(PLANTS)}") from None
    return cls(**params)
