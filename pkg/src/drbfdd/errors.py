"""Exception hierarchy shared by the library and the command line."""


class ShapeError(ValueError):
    """Tensor dimensions do not agree with what an operation expects."""


class DataError(ValueError):
    """Malformed or inconsistent input data (files, labels, scenarios)."""


class ModelFormatError(DataError):
    """A serialized model file is corrupt or of an unknown version."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class TrainingDiverged(FloatingPointError):
    """Loss became NaN or infinite during training."""


class MissingContextError(RuntimeError):
    """A backward pass was requested without a matching forward pass."""
