class ShapeError(ValueError):
    """Raised when a tensor or layer shape does not propagate through an architecture."""

    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message if layer_index is None else f"layer {layer_index}: {message}")
        self.layer_index = layer_index


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not match its binary format."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ClockUnavailableError(RuntimeError):
    """Raised when the process CPU clock cannot time an inference."""


class NotFittedError(RuntimeError):
    """Raised when a regressor is used before fit."""


class ConfigError(ValueError):
    """Raised for malformed or incomplete configuration."""


class PhaseError(RuntimeError):
    """Raised when an attack phase fails after its inputs were accepted."""
