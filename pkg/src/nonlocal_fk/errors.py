"""Exception hierarchy shared by every module."""


class NonlocalFKError(Exception):
    """Base class for all package errors."""


class DomainError(NonlocalFKError, ValueError):
    """An argument lies outside the domain where the operation is defined."""


class GridMismatchError(NonlocalFKError, ValueError):
    """Operands live on different grids."""


class UnresolvableKernelError(NonlocalFKError, ValueError):
    """A kernel profile is narrower than one grid cell."""


class CoverageError(NonlocalFKError, ValueError):
    """A time series does not cover the requested horizon."""


class AssumptionViolated(NonlocalFKError):
    """A structural hypothesis (e.g. non-negativity of J_kappa) fails.

    ``assumption`` names the violated hypothesis so reports can echo it.
    """

    def __init__(self, message, assumption=None):
        super().__init__(message)
        self.assumption = assumption


class EstimatorOverflow(NonlocalFKError, FloatingPointError):
    """Feynman-Kac weight exponent too large to represent."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats or {}


class ConvergenceFailure(NonlocalFKError, RuntimeError):
    """Fixed-point iteration did not contract."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class StepSizeError(NonlocalFKError, RuntimeError):
    """Time step violates the stability bound or the run blew up."""


class InvalidRateFunction(NonlocalFKError, ValueError):
    """Supplied decay-rate function breaks the required monotonicity."""


class ConfigurationError(NonlocalFKError, ValueError):
    """Invalid experiment or spectrum configuration.

    ``problems`` lists every offending field.
    """

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems or [])


class PositivityWarning(UserWarning):
    """Solver produced values below the negativity floor."""
