"""Exception types raised across the package."""


class TwoViewError(Exception):
    """Base class for all errors raised by twoview."""

    kind = "TwoViewError"

    def __init__(self, message: str = ""):
        super().__init__(message)
        self.kind = type(self).__name__


class DegenerateInput(TwoViewError, ValueError):
    pass


class NonInvertible(TwoViewError, ValueError):
    pass


class CheiralityAmbiguous(TwoViewError):
    pass


class NotEnoughCorrespondences(TwoViewError, ValueError):
    pass


class NoModelFound(TwoViewError):
    pass


class InsufficientOffPlane(TwoViewError):
    pass


class MissingLevel(TwoViewError, ValueError):
    pass


class DimMismatch(TwoViewError, ValueError):
    pass


class DimensionMismatch(TwoViewError, ValueError):
    pass


class EmptyInput(TwoViewError, ValueError):
    pass


class ProjectionFailed(TwoViewError):
    pass


class ConfigError(TwoViewError, ValueError):
    """Invalid configuration value; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class ParseError(TwoViewError, ValueError):
    """Malformed binary file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IndexOutOfRange(ParseError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class DuplicatePair(ParseError):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row
