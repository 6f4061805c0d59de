"""Exception hierarchy shared by all pipeline stages.

Each class maps onto one CLI exit code so that the command line can report
failures without inspecting messages.
"""


class ForecastError(Exception):
    """Base class for every error raised by the package."""

    exit_code = 1


class DataError(ForecastError, ValueError):
    """Input data failed validation (malformed row, bad value, missing team)."""

    exit_code = 2


class ConvergenceError(ForecastError, RuntimeError):
    """An iterative fit stopped without meeting its convergence criterion."""

    exit_code = 3

    def __init__(self, message, *, iterations=None, gradient_norm=None):
        super().__init__(message)
        self.iterations = iterations
        self.gradient_norm = gradient_norm


class InvariantError(ForecastError, AssertionError):
    """An internal consistency check failed."""

    exit_code = 4
