"""Exception hierarchy shared by every clrnet module."""


class ClrError(Exception):
    """Base class for all clrnet errors."""


class ShapeError(ClrError, ValueError):
    pass


class StateError(ClrError, RuntimeError):
    pass


class SpecError(ClrError, ValueError):
    pass


class DataError(ClrError, ValueError):
    pass


class FormatError(ClrError, ValueError):
    pass


class RangeError(ClrError, ValueError):
    pass


class ConfigError(ClrError, ValueError):
    pass


class InvariantViolation(ClrError, AssertionError):
    """Raised when a frozen tensor is found modified. Never recoverable."""
