"""Dataset loading and task-sequence construction."""

from .dataset import Dataset, normalize, stratified_indices
from .idx import load_idx, read_idx, write_idx
from .manifest import load_manifest, read_pnm, write_pnm
from .synthetic import write_synthetic_idx
from .tasks import (
    ClassSplit,
    Compose,
    PixelPermute,
    Rotate,
    TaskSequenceSpec,
    TaskSpec,
    generator_from_dict,
    make_tasks,
)

__all__ = [
    "Dataset", "normalize", "stratified_indices", "load_idx", "read_idx", "write_idx",
    "load_manifest", "read_pnm", "write_pnm", "write_synthetic_idx", "ClassSplit", "Compose",
    "PixelPermute", "Rotate", "TaskSequenceSpec", "TaskSpec", "generator_from_dict", "make_tasks",
]
