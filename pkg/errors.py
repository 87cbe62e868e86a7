"""
Error types for the slicing simulator and TD3 engine
Library modules raise these; only the CLI maps them to exit codes
"""
from typing import Dict, Optional


class SlicingError(Exception):
    """Base class for every error raised by this project."""


class ConfigError(SlicingError):
    """Invalid or unknown configuration field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class DomainError(SlicingError, ValueError):
    """A cost-model or sampler input is outside its mathematical domain."""


class ContractError(SlicingError):
    """Caller broke an API contract (shapes, call order, architecture)."""


class TrainingError(SlicingError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, float]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)


class BufferNotReadyError(SlicingError):
    """Replay buffer holds fewer transitions than the requested batch."""


class CheckpointError(SlicingError):
    """Checkpoint missing, corrupted or written by an unsupported version."""


class DimensionMismatchError(SlicingError):
    """Checkpoint network dimensions do not match the scenario."""


class ScenarioMismatchError(SlicingError):
    """Two configurations, or a configuration and a checkpoint, do not share one scenario."""


class MetricsFormatError(SlicingError):
    """Metrics CSV does not follow the expected schema."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")
