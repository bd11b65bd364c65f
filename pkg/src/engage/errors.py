"""Exception types shared across the package.

Argument errors are plain ``ValueError``; the classes below mark failures
that come from data rather than from how a function was called.
"""


class FormatError(ValueError):
    """A file or byte stream does not follow its documented layout."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DataError(ValueError):
    """Input values are unusable (non-finite, degenerate, single-class...)."""


class UndefinedCorrelationError(DataError):
    """Pearson correlation requested for a constant sequence."""


class ReportError(ValueError):
    """A report file of the wrong format or version, or an empty report set."""


class SingleClassError(DataError):
    """Training or splitting needs both classes but the data holds only one."""
