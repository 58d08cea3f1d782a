"""Exception hierarchy shared across the package.

CLI exit-code mapping: ConfigError-family -> 2, FormatError/IO -> 3,
verification failures -> 1.
"""


class DynasegError(Exception):
    """Base class for all package errors."""


class ConfigError(DynasegError):
    """Invalid configuration value or inconsistent hyperparameters."""


class DimensionError(DynasegError):
    """Tensor shape mismatch or non-positive derived size."""


class TaskError(DynasegError):
    """Unknown or out-of-range task id."""


class ScheduleError(DynasegError):
    """Learning-rate schedule queried outside its domain."""


class EvaluationError(DynasegError):
    """Non-finite values or a failed numeric evaluation."""


class FormatError(DynasegError):
    """Malformed binary file. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UndefinedMetricError(DynasegError):
    """Metric undefined for the given inputs (e.g. Hausdorff on empty mask)."""


class CheckpointMismatchError(ConfigError):
    """Checkpoint and requested configuration disagree on listed fields."""

    def __init__(self, fields: dict):
        lines = ", ".join(f"{k}: checkpoint={a!r} vs requested={b!r}"
                          for k, (a, b) in sorted(fields.items()))
        super().__init__(f"incompatible checkpoint: {lines}")
        self.fields = fields
