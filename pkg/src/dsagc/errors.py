"""Exception hierarchy shared by all modules."""


class DSAGCError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DSAGCError, ValueError):
    """Invalid configuration value or out-of-range count."""


class ShapeError(DSAGCError, ValueError):
    pass


class InputError(DSAGCError, ValueError):
    """Non-finite or otherwise unusable input data."""


class NumericalError(DSAGCError, ArithmeticError):
    pass


class ProtocolError(DSAGCError):
    """Violation of the S/U/T training protocol (e.g. U rows before the stage switch)."""


class FeatureFileError(DSAGCError, IOError):
    """Base class for feature/checkpoint container load failures."""


class MalformedHeaderError(FeatureFileError):
    pass


class DimensionMismatchError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass
