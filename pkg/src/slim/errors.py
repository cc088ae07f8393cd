"""Shared exception types for the slim pipeline."""


class SlimError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(SlimError, ValueError):
    """An input violates a documented precondition or invariant."""


class FormatError(SlimError, ValueError):
    """A file does not conform to its on-disk format."""


class ChecksumError(FormatError):
    """A file's whole-file checksum does not match its contents."""


class NumericError(SlimError, ArithmeticError):
    """A computation produced non-finite values."""
