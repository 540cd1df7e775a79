"""Exception hierarchy shared by every sigflow module."""


class SigflowError(Exception):
    """Base class for all library errors."""


class ShapeError(SigflowError, ValueError):
    """Operands have incompatible channel counts, depths or sizes."""


class ConfigError(SigflowError, ValueError):
    """A configuration value is unknown, malformed or out of range."""


class DataError(SigflowError):
    """Input data is missing, malformed or unsuitable."""


class NumericalError(SigflowError, ArithmeticError):
    """A computation produced non-finite values or could not be solved."""


class CheckpointError(SigflowError):
    """A checkpoint file is truncated, corrupted or of an unknown version."""
