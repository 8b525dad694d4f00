"""Exception hierarchy shared by all modules."""


class WatermarkError(Exception):
    """Base class for errors raised by nnwmark."""


class ConfigurationError(WatermarkError, ValueError):
    """Shapes, sizes or options that do not fit together."""


class NumericError(WatermarkError, ArithmeticError):
    """Non-finite values in a loss, gradient or parameter update."""


class DataError(WatermarkError, ValueError):
    """Malformed input data or files."""


class ChecksumError(DataError):
    pass


class VersionError(DataError):
    pass


class ValidationError(DataError):
    """A stored object violates its invariants (e.g. a malformed key matrix)."""
