"""Exception hierarchy.

Denials, guard verdicts and ledger invalidity are returned as values; these
exceptions are reserved for caller misuse and malformed input.
"""


class UivTspError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(UivTspError):
    """Unsupported width, embed count or scenario value."""


class RejectionError(UivTspError):
    """The authority refuses an operation (unknown worker, vulnerability, ...)."""


class TokenStateError(UivTspError):
    """A token is in the wrong status for the requested transition."""


class IntegrityError(UivTspError):
    """Embedded tracing token copies disagree."""


class LedgerError(UivTspError):
    """Invalid input to a ledger operation."""


class LedgerFormatError(LedgerError):
    """A serialized chain could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class PreconditionError(UivTspError):
    """Caller violated an operation precondition."""


class SimulationError(UivTspError):
    """A benchmark or scenario run could not complete its own protocol step."""
