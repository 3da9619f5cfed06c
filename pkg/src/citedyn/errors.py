"""Exception hierarchy shared across the toolkit.

Exit-code mapping for the command line lives on the classes so the CLI
never has to enumerate exception types: usage problems exit 1, bad or
insufficient data exit 2, optimizer failures exit 3.
"""


class CitedynError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 2


class UsageError(CitedynError):
    """Bad invocation: unknown subcommand, malformed flag, missing argument."""

    exit_code = 1


class DataError(CitedynError):
    """Input data violates a documented contract."""

    exit_code = 2


class SchemaError(DataError):
    """File lacks required columns or declares an unknown format."""


class DomainError(DataError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class InsufficientDataError(DataError):
    """Too few observations to determine the requested quantities."""


class DegenerateDataError(DataError):
    """Data admits no meaningful fit (zero variance, all-zero response)."""


class InvalidInputError(DataError):
    """Structurally valid object in a state the operation cannot accept."""


class ConvergenceError(CitedynError):
    """Optimizer failed to locate an interior optimum."""

    exit_code = 3
