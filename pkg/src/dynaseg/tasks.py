"""Task registry: which annotation channels each segmentation task provides.

The default registry holds the seven abdominal organ/tumor tasks with their
annotation availability; tumor-only tasks never emit organ labels and
organ-only tasks never emit tumor labels.
"""

from dataclasses import dataclass

from .errors import TaskError


@dataclass(frozen=True)
class TaskDescriptor:
    id: int
    name: str
    organ_labeled: bool
    tumor_labeled: bool

    def __post_init__(self):
        if not (self.organ_labeled or self.tumor_labeled):
            raise TaskError(f"task {self.name!r} provides no annotation channel")


_DEFAULT = (
    ("liver", True, True),
    ("kidney", True, True),
    ("hepatic_vessel", True, True),
    ("pancreas", True, True),
    ("colon", False, True),
    ("lung", False, True),
    ("spleen", True, False),
)


def default_registry() -> list:
    """The seven-task registry (organ flag, tumor flag per task)."""
    return [TaskDescriptor(i, name, organ, tumor)
            for i, (name, organ, tumor) in enumerate(_DEFAULT)]


def get_task(task_id: int, registry: list | None = None) -> TaskDescriptor:
    registry = registry if registry is not None else default_registry()
    for t in registry:
        if t.id == task_id:
            return t
    raise TaskError(f"unknown task id {task_id}")
