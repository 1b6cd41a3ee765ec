"""Exception types raised across the package."""


class TclError(Exception):
    """Base class for all package errors."""


class ValidationError(TclError, ValueError):
    """Input failed a structural or physical validity check."""


class DimensionError(ValidationError):
    """Array shapes are inconsistent with the requested operation."""


class NonDiagonalizable(TclError):
    """The free generator has no well-conditioned eigenbasis.

    The algebraic moment path needs a diagonalizing similarity transform.
    Use the quadrature backend (``backend="quadrature"``) instead.
    """


class NoLimit(TclError):
    """A t -> infinity limit does not exist (or could not be confirmed)."""


class ConvergenceError(TclError):
    """An adaptive quadrature exhausted its budget before reaching tolerance."""


class StiffnessError(TclError):
    """The adaptive Runge-Kutta integrator's step size underflowed."""


class SingularWindow(TclError):
    """The projected propagator is not invertible on range(P) at some time."""

    def __init__(self, t, cond):
        super().__init__(f"P U P is singular on range(P) at t={t!r} (cond={cond:.3e})")
        self.t = t
        self.cond = cond


class ConsistencyError(TclError):
    """A precondition on the initial state or model is violated."""
