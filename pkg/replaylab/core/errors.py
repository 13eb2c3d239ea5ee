from __future__ import annotations


class ReplayLabError(Exception):
    """Base class for every error raised by replaylab."""


class BufferIndexError(ReplayLabError, IndexError):
    pass


class EmptyBufferError(ReplayLabError, ValueError):
    pass


class EmptyMeasureError(ReplayLabError, ValueError):
    pass


class DivergenceError(ReplayLabError, FloatingPointError):
    pass


class EnvironmentStateError(ReplayLabError, RuntimeError):
    pass


class DatasetFormatError(ReplayLabError, ValueError):
    def __init__(self, message: str, *, record_index: int) -> None:
        super().__init__(f"record {record_index}: {message}")
        self.record_index = record_index


class ConfigError(ReplayLabError, ValueError):
    def __init__(self, message: str, *, key: str | None = None) -> None:
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
