"""Exception hierarchy shared by the library and the CLI."""


class HstError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(HstError):
    exit_code = 2


class DataError(HstError):
    exit_code = 3


class NumericError(HstError):
    exit_code = 4


class ShapeError(HstError, ValueError):
    """Raised when a tensor does not fit the layer it is fed to."""

    exit_code = 4

    def __init__(self, message: str, layer_index: int | None = None):
        self.layer_index = layer_index
        if layer_index is not None:
            message = f"layer {layer_index}: {message}"
        super().__init__(message)


class DomainError(HstError, ValueError):
    exit_code = 4
