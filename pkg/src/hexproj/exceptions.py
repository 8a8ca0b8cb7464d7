"""Exception hierarchy shared by all modules."""


class HexprojError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(HexprojError, ValueError):
    """Operand shapes are incompatible."""


class SingularMatrixError(HexprojError, ArithmeticError):
    """A factorization met a pivot below the singularity threshold."""


class StateError(HexprojError, RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""


class InputError(HexprojError, ValueError):
    """An argument is outside its valid domain."""


class FormatError(HexprojError, ValueError):
    """A file does not match the expected binary or text layout."""


class ConfigError(HexprojError, ValueError):
    """An experiment configuration is invalid."""
