"""Exception hierarchy shared across the package.

CLI exit codes map onto these classes: usage errors exit 1, DataError
(including FormatError) exits 2, NumericError exits 3.
"""

from __future__ import annotations


class EcgTextError(Exception):
    """Base class for all errors raised by this package."""


class DataError(EcgTextError):
    """Invalid data: failed invariants, missing labels, leaked splits."""


class FormatError(DataError):
    """Malformed binary/tabular file. Carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(EcgTextError):
    """Numerical failure: non-finite loss, zero-norm vectors, etc."""
