"""Exception hierarchy shared by every subpackage."""


class ConvAsrError(Exception):
    """Base class; the CLI maps it to exit code 1."""


class DimensionError(ConvAsrError, ValueError):
    pass


class LabelError(ConvAsrError, ValueError):
    pass


class ContextError(ConvAsrError, ValueError):
    """Time axis too short for a receptive field, or wrong window length."""


class UninitializedStatisticsError(ConvAsrError, RuntimeError):
    pass


class ConsistencyError(ConvAsrError, ValueError):
    pass


class ConfigError(ConvAsrError, ValueError):
    pass


class SpecError(ConvAsrError, ValueError):
    """Feature layout does not match what a model or FeatureSpec expects."""


class DataError(ConvAsrError, ValueError):
    pass


class TrainingError(ConvAsrError, RuntimeError):
    pass


class AlignmentError(ConvAsrError, ValueError):
    pass


class CropError(ConvAsrError, ValueError):
    pass


class FusionError(ConvAsrError, ValueError):
    pass


class DegenerateError(ConvAsrError, ValueError):
    pass


class FormatError(ConvAsrError, ValueError):
    """Malformed file on one of the documented interchange formats."""
