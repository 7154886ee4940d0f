"""Exception types shared across the package."""


class MovrecError(Exception):
    """Base class for all errors raised by this package."""


class AnnotationError(MovrecError):
    """Malformed or invalid annotation data."""

    def __init__(self, message: str, path=None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class NotEnoughHistory(MovrecError):
    """A flow cascade was requested before enough frames were buffered.

    ``missing_index`` is the frame index that was needed but not available.
    """

    def __init__(self, missing_index: int):
        super().__init__(f"frame {missing_index} is not available in the buffer")
        self.missing_index = missing_index


class ConfigError(MovrecError):
    """Invalid or inconsistent run configuration."""


class CheckpointError(MovrecError):
    """Checkpoint file missing, corrupt, or incompatible with the config."""


class PretrainedWeightsError(MovrecError):
    """Pretrained backbone weights were requested but could not be loaded."""


class EvaluationError(MovrecError):
    """Evaluation is undefined for the given inputs (e.g. empty ground truth)."""
