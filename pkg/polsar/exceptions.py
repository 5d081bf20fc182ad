"""
Error hierarchy for the polsar pipeline.

Every error carries the process exit code a management command reports
when the error escapes it: 2 for configuration and input problems, 3 for
numerical failures.
"""


class PolsarError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ValidationError(PolsarError, ValueError):
    """Input violates a documented precondition or invariant."""

    exit_code = 2


class ConfigurationError(ValidationError):
    """Run or model configuration is inconsistent (e.g. s mod p != 0)."""


class DomainError(ValidationError):
    """Distribution parameters outside their valid domain (e.g. L < q)."""


class FormatError(ValidationError):
    """
    A scene, label or checkpoint file is malformed.

    Attributes:
        path: File being decoded, when known
        offset: Byte offset at which decoding failed
        expected: Expected byte length or value, when meaningful
        actual: Actual byte length or value, when meaningful
    """

    def __init__(self, message, *, path=None, offset=None, expected=None, actual=None):
        details = []
        if path is not None:
            details.append(f"file {path}")
        if offset is not None:
            details.append(f"offset {offset}")
        if expected is not None or actual is not None:
            details.append(f"expected {expected}, got {actual}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.path = path
        self.offset = offset
        self.expected = expected
        self.actual = actual


class NumericalError(PolsarError, ArithmeticError):
    """Cholesky failure, non-finite tensor values or a diverging loss."""

    exit_code = 3
