"""Exception hierarchy shared by all efat_sim modules."""


class EfatError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EfatError):
    """Invalid configuration value, unknown key, or violated precondition."""


class ShapeError(EfatError):
    """Array dimensions do not line up."""


class DataError(EfatError):
    """Bad dataset contents (label out of range, empty set, ...)."""


class NumericError(EfatError):
    """NaN/Inf where finite values are required."""


class PartitionError(EfatError):
    """Non-IID split could not be constructed."""


class FormatError(EfatError):
    """On-disk artifact is malformed or truncated."""


class ProtocolError(EfatError):
    """Federation phases ran out of order (e.g. exchange before generation)."""
