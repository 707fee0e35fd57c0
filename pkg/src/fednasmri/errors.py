"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Tensor shapes do not fit the operation."""


class UnsupportedKernelError(ValueError):
    """Convolution kernel size is not odd."""


class UnsupportedSizeError(ValueError):
    """FFT length is not a power of two."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class ConstructionError(ValueError):
    """A model or topology was assembled inconsistently."""


class InvalidEncodingError(ValueError):
    """Architecture logits contain NaN or are otherwise unusable."""


class ConfigurationError(ValueError):
    """Parameters describe an infeasible setup (mask budget, splits, ...)."""


class AggregationError(ValueError):
    """Client updates cannot be combined (mismatched structure)."""


class ValidationError(ValueError):
    """A run configuration failed validation."""


class CheckpointError(IOError):
    """Base class for container read failures."""


class FormatError(CheckpointError):
    """Bad magic bytes."""


class VersionError(CheckpointError):
    """Container written by a newer format version."""


class CorruptionError(CheckpointError):
    """Manifest or payload is truncated or inconsistent."""
