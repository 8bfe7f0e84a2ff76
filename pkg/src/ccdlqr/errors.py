"""Exception hierarchy shared by the analysis and optimization pipelines."""


class CCDError(Exception):
    """Base class for every failure raised by the toolkit."""


class DomainError(CCDError, ValueError):
    """Input outside the domain of a plant model (non-finite state, negative rotor speed)."""


class SingularJacobian(CCDError):
    """The reduced steady-state Jacobian cannot be factorized."""

    def __init__(self, message, cond=float("inf")):
        super().__init__(f"{message} (condition estimate {cond:.3e})")
        self.cond = cond


class NoConvergence(CCDError):
    """An iterative solver ran out of iterations.

    ``best`` holds the best iterate found and ``norm`` its residual norm.
    """

    def __init__(self, message, best=None, norm=float("nan")):
        super().__init__(f"{message} (residual norm {norm:.3e})")
        self.best = best
        self.norm = norm


class LyapunovSingular(CCDError):
    """The Kronecker system of a Lyapunov equation is singular."""


class NotStabilizable(CCDError):
    """No stabilizing feedback gain could be found for the linearized plant."""


class DivergedTrajectory(CCDError):
    """The closed-loop simulation produced a non-finite state."""

    def __init__(self, step):
        super().__init__(f"non-finite state at step {step}")
        self.step = step


class OptimizationAborted(CCDError):
    """The optimizer could not recover from repeated analysis failures."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class ConfigError(CCDError):
    """Invalid run configuration."""
