"""Exception types shared across the engine."""


class ClickliftError(Exception):
    """Base class for all engine errors."""


class CalibrationError(ClickliftError):
    """Camera calibration is malformed or inconsistent with its frame."""


class ShapeMismatchError(ClickliftError):
    """Two arrays that must share a shape do not."""


class AnnotationError(ClickliftError):
    """A click, taxonomy, or project operation violated its contract."""


class FlowChainError(ClickliftError):
    """Flow fields do not form a contiguous source-to-target chain."""


class ProviderError(ClickliftError):
    """A flow or mask provider failed to produce a usable result."""


class StorageError(ClickliftError):
    """A file could not be read, parsed, or written."""


class ManifestError(StorageError):
    """A dataset manifest references missing or unparsable resources."""


class ConfigError(ClickliftError):
    """A pipeline or service configuration is unusable."""


class StageError(ClickliftError):
    """A pipeline stage failed; carries the stage name for exit reporting."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
