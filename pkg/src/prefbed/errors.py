"""Exception hierarchy shared across the package."""


class PrefBedError(Exception):
    """Base class for all package errors."""


class ContractViolation(PrefBedError, ValueError):
    """An argument broke a documented precondition (shape, bounds, counts)."""


class NumericalError(PrefBedError, ArithmeticError):
    """A linear-algebra routine failed even after stabilisation."""


class FittingError(PrefBedError, RuntimeError):
    """Model fitting could not produce a finite optimum."""


class OracleError(PrefBedError, RuntimeError):
    """The comparison oracle could not produce a verdict."""


class TransportError(OracleError):
    """The remote oracle endpoint answered with a non-success status or was unreachable."""


class ConfigError(PrefBedError, ValueError):
    """An experiment configuration file could not be parsed or validated.

    ``key`` (dotted path) lets callers point at the offending line.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
