from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DataError


@dataclass
class Dataset:
    """Normalized images ``[n, c, h, w]`` (float32) with integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list
    normalization: Optional[tuple] = None  # (mean[c], std[c]) applied at load
    name: str = ""
    ids: Optional[np.ndarray] = field(default=None, repr=False)  # source sample ids

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32, order="C")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be [n, c, h, w], got shape {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError(f"labels must lie in [0, {len(self.class_names)})")
        if self.ids is None:
            self.ids = np.arange(len(self.labels))

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, index, name=None) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], list(self.class_names),
                       self.normalization, name or self.name, self.ids[index])


def normalize(raw: np.ndarray, normalization=None):
    """Scale ``[0, 1]`` images per channel. Defaults to dataset-wide mean/std."""
    if normalization is None:
        mean = raw.mean(axis=(0, 2, 3))
        std = raw.std(axis=(0, 2, 3))
        std = np.where(std > 0, std, 1.0)
    else:
        mean, std = (np.asarray(v, dtype=np.float64).reshape(-1) for v in normalization)
        if mean.size == 1 and raw.shape[1] > 1:
            mean, std = np.repeat(mean, raw.shape[1]), np.repeat(std, raw.shape[1])
        if mean.size != raw.shape[1] or std.size != raw.shape[1]:
            raise DataError(f"normalization needs {raw.shape[1]} channel values")
    out = (raw - mean[None, :, None, None]) / std[None, :, None, None]
    return out.astype(np.float32), (mean.astype(np.float32), std.astype(np.float32))


def stratified_indices(labels: np.ndarray, size: Optional[int], rng: np.random.Generator,
                       exclude=None) -> np.ndarray:
    """Pick ``size`` indices with equal per-class counts (remainder to the lowest class ids).

    Returns sorted indices. ``size=None`` keeps everything not excluded.
    """
    pool = np.arange(len(labels))
    if exclude is not None and len(exclude):
        pool = np.setdiff1d(pool, exclude)
    if size is None:
        return pool
    classes = np.unique(labels[pool])
    if size > len(pool):
        raise DataError(f"requested {size} samples but only {len(pool)} are available")
    base, extra = divmod(size, len(classes))
    picked = []
    for rank, cls in enumerate(classes):
        want = base + (1 if rank < extra else 0)
        members = pool[labels[pool] == cls]
        if want > len(members):
            raise DataError(f"class {cls} has {len(members)} samples, {want} requested")
        picked.append(rng.choice(members, size=want, replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)
