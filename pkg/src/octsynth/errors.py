"""Exception types shared across the toolkit."""


class OctsynthError(Exception):
    """Base class for all octsynth errors."""


class ShapeError(OctsynthError, ValueError):
    """Array has the wrong shape, resolution or dimensionality."""


class ParameterError(OctsynthError, ValueError):
    """A value is outside its documented domain."""


class ConfigError(OctsynthError, ValueError):
    """Malformed configuration document (unknown keys, bad sections)."""


class DataError(OctsynthError, ValueError):
    """Dataset violates a precondition (empty, zero variance, imbalance)."""


class NumericError(OctsynthError, ArithmeticError):
    """Computation produced non-finite values or a non-PSD matrix."""


class FormatError(OctsynthError, ValueError):
    """Checkpoint container has the wrong magic or format version."""


class CorruptionError(OctsynthError, ValueError):
    """Checkpoint container is truncated or fails its digest check."""


class UndefinedKappaError(OctsynthError, ZeroDivisionError):
    """Fleiss' kappa is undefined: expected agreement is exactly 1."""
