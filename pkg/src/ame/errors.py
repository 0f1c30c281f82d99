"""Exception types shared across the library.

Callers can catch these instead of string-matching messages: bad user
configuration, malformed input files, violated API contracts, and numeric
breakdown are distinct failure classes with distinct exit codes in the CLI.
"""


class AmeError(Exception):
    """Base class for all library errors."""


class ShapeError(AmeError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateInputError(AmeError):
    """Input is mathematically degenerate (zero vector, empty sequence)."""


class ContractError(AmeError):
    """Arguments violate an API contract (mode mismatch, empty inputs)."""


class ConfigError(AmeError):
    """Invalid configuration value or combination."""


class ParseError(AmeError):
    """Malformed line in a text input file."""

    def __init__(self, message: str, path=None, line: int | None = None):
        if path is not None and line is not None:
            message = f"{path}:{line}: {message}"
        elif line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class FormatError(AmeError):
    """File-level structure does not match the expected format."""


class NumericError(AmeError):
    """Numeric breakdown: non-finite values or a failed factorization."""


class SingularityError(NumericError):
    """A linear system is rank deficient."""


class IncompatibleCheckpointError(AmeError):
    """Checkpoint does not match the current vocabulary or dimensions."""
