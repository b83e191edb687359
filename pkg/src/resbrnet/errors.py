"""Exception hierarchy shared by every subsystem."""


class ResBRNetError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ResBRNetError, ValueError):
    pass


class SizeError(ResBRNetError, ValueError):
    pass


class ContractError(ResBRNetError, ValueError):
    pass


class GraphError(ResBRNetError, RuntimeError):
    pass


class ParameterError(ResBRNetError, ValueError):
    pass


class LabelError(ResBRNetError, ValueError):
    pass


class DegenerateBatchError(ResBRNetError, ValueError):
    pass


class ConfigError(ResBRNetError, ValueError):
    pass


class OptimizerStateError(ResBRNetError, KeyError):
    pass


class NumericError(ResBRNetError, ArithmeticError):
    """A NaN or Inf showed up where a finite value is required."""


class DatasetError(ResBRNetError):
    """Base for ingestion, split and batching failures."""


class IngestionError(DatasetError):
    pass


class SplitError(DatasetError):
    pass


class IterationError(DatasetError):
    pass


class InputError(ResBRNetError, ValueError):
    pass


class UndefinedCurveError(InputError):
    pass


class TsneConfigError(ConfigError):
    pass


class CheckpointError(ResBRNetError):
    """Base for every checkpoint/cache load failure."""


class CRCMismatchError(CheckpointError):
    pass


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ShapeDisagreementError(CheckpointError):
    pass
