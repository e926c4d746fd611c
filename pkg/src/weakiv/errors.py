"""Exception hierarchy shared by all modules.

Configuration-type problems derive from ``ConfigError`` and numerical
problems from ``NumericalError`` so that the command line front end can map
them to distinct exit codes.
"""


class WeakIVError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(WeakIVError, ValueError):
    """Invalid user input: arguments, roles, flags."""


class SchemaError(ConfigError):
    """A required column is missing from an input file."""


class ParseError(ConfigError):
    """A cell could not be parsed as a number."""


class UnsupportedError(ConfigError):
    """A combination of options for which no calibrated result exists."""


class NumericalError(WeakIVError, ArithmeticError):
    """A numerical precondition failed or an algorithm did not converge."""


class RankError(NumericalError):
    """A matrix that must have full column rank does not."""


class ConvexityError(NumericalError):
    """The k-class objective is not strictly convex at the requested kappa."""

    def __init__(self, message, threshold):
        super().__init__(message)
        self.threshold = threshold


class DomainError(NumericalError):
    """A documented precondition on the data does not hold."""


class OptimizationError(NumericalError):
    """The optimizer did not converge from any start."""

    def __init__(self, message, best_value=None):
        super().__init__(message)
        self.best_value = best_value


class QuadratureError(NumericalError):
    """Numerical integration did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved
