"""Exception hierarchy shared by every ibmdn module."""


class IBMDNError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(IBMDNError, ValueError):
    """Bad user input: shapes, configuration values, sizes."""


class InvalidShapeError(ValidationError):
    pass


class ShapeMismatchError(ValidationError):
    pass


class UnsupportedKernelError(ValidationError):
    pass


class InvalidConfigError(ValidationError):
    pass


class DegenerateBatchError(ValidationError):
    pass


class TooSmallError(ValidationError):
    pass


class NotScalarError(ValidationError):
    pass


class NumericFaultError(IBMDNError, ArithmeticError):
    """A forward operation produced NaN or Inf."""


class EmptyGradError(IBMDNError, RuntimeError):
    """Optimizer stepped before any gradient was populated."""


class EmptyDatasetError(IBMDNError, RuntimeError):
    pass


class UnsupportedFormatError(IBMDNError, OSError):
    pass


class CheckpointError(IBMDNError, OSError):
    """Any failure to parse or match a checkpoint file."""


class NotACheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class ManifestMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass
