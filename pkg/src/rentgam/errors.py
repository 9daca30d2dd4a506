"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration and input
problems exit 2, numerical or domain failures exit 3.
"""


class RentGamError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(RentGamError):
    """Bad run configuration: missing files, unknown keys, invalid values."""


class DataError(RentGamError):
    """Input data cannot be used: schema violations, empty joins."""


class NumericalError(RentGamError):
    """Numerical failure: degenerate systems, undefined statistics."""


class OutOfDomainError(NumericalError):
    """A value falls outside the domain a basis was built on."""
