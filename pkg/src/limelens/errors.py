"""Exception hierarchy shared by all limelens modules."""


class LimelensError(Exception):
    """Base class for all errors raised by limelens."""


class DimensionError(LimelensError):
    """Tensor shapes do not line up for the requested operation."""


class ConfigError(LimelensError):
    """A configuration value is outside its allowed range."""


class DataError(LimelensError):
    """Input data violates a dataset-level contract."""


class StateError(LimelensError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class FormatError(LimelensError):
    """A serialized artifact (weights file, document) is malformed."""


class NumericalError(LimelensError):
    """A numerical routine could not produce a reliable result."""
