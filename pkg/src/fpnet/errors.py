"""Exception hierarchy shared by all fpnet modules.

CLI exit-code mapping: UsageError/ConfigError -> 2, DataError/FormatError -> 3,
NumericError -> 4.
"""


class FPNetError(Exception):
    """Base class for all fpnet errors."""


class ShapeError(FPNetError, ValueError):
    """Tensor extents do not satisfy an operation's contract."""


class NumericError(FPNetError, ArithmeticError):
    """Non-finite values were produced or consumed."""


class UsageError(FPNetError, RuntimeError):
    """An API was called out of protocol (e.g. backward on a non-scalar)."""


class ConfigError(UsageError):
    """Invalid configuration file or flag combination."""


class DataError(FPNetError, ValueError):
    """Dataset content violates its contract (missing pairs, bad ranges)."""


class FormatError(FPNetError, ValueError):
    """A serialized artifact (checkpoint, image) is malformed."""
