"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: config/argument problems exit 2,
training failures exit 3, pipeline failures exit 4.
"""


class OodtownError(Exception):
    """Base class for all package errors."""


class ConfigError(OodtownError, ValueError):
    """Invalid configuration or incompatible shapes/specs."""


class ArgumentError(OodtownError, ValueError):
    """Invalid argument to an operation (bad range, wrong count, ...)."""


class UsageError(OodtownError, RuntimeError):
    """API misuse, e.g. backward() without a forward cache."""


class NumericError(OodtownError, ArithmeticError):
    """Non-finite values or accumulator-overflow hazards."""


class TrainingError(OodtownError, RuntimeError):
    """Training diverged; carries the epoch where it happened."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class PipelineError(OodtownError, RuntimeError):
    """A pipeline task failed; carries the task name."""

    def __init__(self, message: str, task: str | None = None):
        super().__init__(message)
        self.task = task


class OverloadError(PipelineError):
    """Virtual-time run aborted because the event/job queue exceeded its bound."""


class ProjectionError(OodtownError, ValueError):
    """Homogeneous projection degenerated (point at the line at infinity)."""
