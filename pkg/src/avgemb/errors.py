"""Exception hierarchy shared by every module."""


class AvgEmbError(Exception):
    """Base class. CLI maps subclasses of this to exit code 2."""


class InvalidParameterError(AvgEmbError, ValueError):
    """A parameter is outside its admissible range."""


class DomainError(AvgEmbError, ValueError):
    """An argument violates the mathematical domain of an operation."""


class DegenerateError(AvgEmbError, ArithmeticError):
    """A quantity that must be strictly positive (variance, mostly) is not."""


class FileFormatError(AvgEmbError, ValueError):
    """An embedding file is malformed, truncated or holds non-finite data."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance.

    Kept outside ``AvgEmbError`` on purpose: the CLI reports it with exit
    code 3 rather than 2.
    """

    def __init__(self, message, value=float("nan"), error_estimate=float("nan")):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate
