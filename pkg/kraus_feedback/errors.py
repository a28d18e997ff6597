"""Exceptions raised by the library, with the CLI exit code they map to."""
from typing import Optional


class KrausFeedbackError(Exception):
    """Base library error."""

    exit_code = 1


class ValidationError(KrausFeedbackError):
    """Input does not satisfy a structural or numeric contract."""

    exit_code = 2


class DimensionError(ValidationError, ValueError):
    """Matrix shapes do not fit the operation."""


class ParameterError(ValidationError, ValueError):
    """Parameter out of range or inconsistent with the input."""


class CptpError(ValidationError):
    """Kraus set violates the normalization condition."""

    def __init__(self, deviation: float, tolerance: float) -> None:
        """Keep the measured deviation for reporting."""
        self.deviation = deviation
        self.tolerance = tolerance
        super().__init__(
            f"Kraus set is not trace preserving: max |sum T^dag T - I| = "
            f"{deviation:.3e} > {tolerance:.1e}"
        )


class SpecParseError(ValidationError):
    """Channel-spec file is malformed."""

    def __init__(self, message: str, location: Optional[str] = None) -> None:
        """Prefix the message with the offending field or line."""
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class CheckFailedError(ValidationError):
    """Experiment hard check failed after its table was emitted."""


class ResourceError(KrausFeedbackError):
    """Computation exceeds a configured resource guard."""

    exit_code = 4


class OutputError(KrausFeedbackError):
    """Result file could not be read or written."""

    exit_code = 3
