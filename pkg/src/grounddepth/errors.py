"""Exception types shared across the package.

The CLI maps each class onto a distinct exit code, so modules raise the
most specific one that applies.
"""


class GroundDepthError(Exception):
    """Base class for all package errors."""


class ValidationError(GroundDepthError, ValueError):
    """An input violates a documented precondition or invariant."""


class FormatError(GroundDepthError, OSError):
    """A file is malformed, truncated or of the wrong kind."""


class NumericError(GroundDepthError, ArithmeticError):
    """A computation is undefined for the given values (log of zero, no overlap, ...)."""
