"""Exception types raised by the solvers and the CLI."""


class InertialBvpError(Exception):
    """Base class for all package errors."""


class InputError(InertialBvpError, ValueError):
    pass


class DegeneracyError(InertialBvpError):
    pass


class NumericalError(InertialBvpError):
    pass


class StepSizeError(NumericalError):
    """Step size underflow during adaptive integration (stiffness or blow-up)."""


class EvaluationError(NumericalError):
    """Non-finite right-hand side value; ``t`` holds the offending time."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class RefinementError(NumericalError):
    pass


class ConditioningError(NumericalError):
    pass


class InvariantError(InertialBvpError):
    """A reflector coordinate left the unit ball or a structural invariant broke."""


class GapViolationError(InertialBvpError):
    """kappa >= 1: the spectral gap is too small for the truncation bound."""


class ConfigError(InertialBvpError, ValueError):
    pass
