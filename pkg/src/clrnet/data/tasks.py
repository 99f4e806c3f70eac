"""Task-sequence generators that turn one labelled dataset into many tasks."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from ..errors import DataError, SpecError
from .dataset import Dataset, stratified_indices


@dataclass
class TaskSpec:
    task_id: int
    name: str
    train: Dataset
    test: Dataset
    num_classes: int
    val: Optional[Dataset] = None

    def __post_init__(self):
        for split in ("train", "val", "test"):
            ds = getattr(self, split)
            if ds is None:
                continue
            if len(ds.labels) and (ds.labels.min() < 0 or ds.labels.max() >= self.num_classes):
                raise DataError(f"task {self.task_id} ({self.name}): {split} labels outside [0, {self.num_classes})")
        if np.intersect1d(self.train.ids, self.test.ids).size:
            raise DataError(f"task {self.task_id}: train and test share sample ids")

    def split(self, name: str) -> Dataset:
        ds = getattr(self, name, None)
        if ds is None:
            raise DataError(f"task {self.task_id} has no {name!r} split")
        return ds


@dataclass(frozen=True)
class ClassSplit:
    groups: tuple

    def __len__(self):
        return len(self.groups)


@dataclass(frozen=True)
class PixelPermute:
    n_tasks: int
    seed: int = 0

    def __len__(self):
        return self.n_tasks


@dataclass(frozen=True)
class Rotate:
    angles: tuple

    def __len__(self):
        return len(self.angles)


@dataclass(frozen=True)
class Compose:
    parts: tuple

    def __len__(self):
        lengths = {len(p) for p in self.parts if len(p) != 1}
        if len(lengths) > 1:
            raise SpecError(f"composed generators disagree on the task count: {sorted(lengths)}")
        return lengths.pop() if lengths else 1


@dataclass(frozen=True)
class TaskSequenceSpec:
    generator: object
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    val_size: int = 0


def generator_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "class_split":
        return ClassSplit(tuple(tuple(int(c) for c in g) for g in d["groups"]))
    if kind == "pixel_permute":
        return PixelPermute(int(d["n_tasks"]), int(d.get("seed", 0)))
    if kind == "rotate":
        return Rotate(tuple(float(a) for a in d["angles"]))
    if kind == "compose":
        return Compose(tuple(generator_from_dict(p) for p in d["parts"]))
    raise SpecError(f"unknown task generator kind {kind!r}")


def _validate(gen, n_classes: int):
    if isinstance(gen, ClassSplit):
        seen = set()
        for g in gen.groups:
            if not g:
                raise SpecError("ClassSplit group is empty")
            if len(set(g)) != len(g) or seen & set(g):
                raise SpecError(f"ClassSplit groups overlap on classes {sorted(seen & set(g)) or g}")
            if min(g) < 0 or max(g) >= n_classes:
                raise SpecError(f"ClassSplit group {g} refers to classes outside [0, {n_classes})")
            seen |= set(g)
    elif isinstance(gen, Rotate):
        if len(set(gen.angles)) != len(gen.angles):
            raise SpecError("Rotate angles must be distinct")
    elif isinstance(gen, PixelPermute):
        if gen.n_tasks < 1:
            raise SpecError("PixelPermute needs at least one task")
    elif isinstance(gen, Compose):
        for p in gen.parts:
            _validate(p, n_classes)
        len(gen)


def _permutations(gen: PixelPermute, hw: int) -> list:
    rng = np.random.Generator(np.random.PCG64(gen.seed))
    perms = [np.arange(hw)]
    for _ in range(1, gen.n_tasks):
        perms.append(rng.permutation(hw))
    return perms


def permute_pixels(images: np.ndarray, perm: np.ndarray) -> np.ndarray:
    n, c, h, w = images.shape
    return np.ascontiguousarray(images.reshape(n, c, h * w)[:, :, perm].reshape(n, c, h, w))


def rotate_images(images: np.ndarray, angle: float, background) -> np.ndarray:
    """Nearest-neighbour rotation about the image centre, counterclockwise as displayed.

    Exposed corners get ``background``.
    """
    if angle % 360 == 0:
        return images.copy()
    out = np.empty_like(images)
    for ch in range(images.shape[1]):
        out[:, ch] = ndimage.rotate(images[:, ch], angle, axes=(2, 1), reshape=False, order=0,
                                    mode="constant", cval=float(background[ch]))
    return out


def _transforms(gen, image_shape) -> list:
    """One callable per task: ``(Dataset) -> (Dataset, name)``."""
    c, h, w = image_shape
    if isinstance(gen, ClassSplit):
        def split_fn(classes):
            remap = {cls: i for i, cls in enumerate(classes)}

            def fn(ds: Dataset):
                keep = np.flatnonzero(np.isin(ds.labels, classes))
                labels = np.array([remap[int(v)] for v in ds.labels[keep]], dtype=np.int64)
                names = [ds.class_names[cls] for cls in classes]
                return Dataset(ds.images[keep], labels, names, ds.normalization, ds.name, ds.ids[keep])
            return fn, "classes" + "-".join(str(cls) for cls in classes)
        return [split_fn(g) for g in gen.groups]
    if isinstance(gen, PixelPermute):
        def perm_fn(i, perm):
            def fn(ds: Dataset):
                return Dataset(permute_pixels(ds.images, perm), ds.labels, ds.class_names,
                               ds.normalization, ds.name, ds.ids)
            return fn, f"permute{i}"
        return [perm_fn(i, p) for i, p in enumerate(_permutations(gen, h * w))]
    if isinstance(gen, Rotate):
        def rot_fn(angle):
            def fn(ds: Dataset):
                if ds.normalization is None:
                    bg = np.zeros(c)
                else:
                    mean, std = ds.normalization
                    bg = -np.asarray(mean) / np.asarray(std)
                return Dataset(rotate_images(ds.images, angle, bg), ds.labels, ds.class_names,
                               ds.normalization, ds.name, ds.ids)
            return fn, f"rotate{angle:g}"
        return [rot_fn(a) for a in gen.angles]
    if isinstance(gen, Compose):
        n = len(gen)
        parts = [_transforms(p, image_shape) for p in gen.parts]
        out = []
        for i in range(n):
            steps = [p[i if len(p) > 1 else 0] for p in parts]

            def fn(ds, steps=steps):
                for step, _ in steps:
                    ds = step(ds)
                return ds
            out.append((fn, "+".join(name for _, name in steps)))
        return out
    raise SpecError(f"unsupported generator {gen!r}")


def make_tasks(spec: TaskSequenceSpec, base, seed: int) -> list:
    """Build the task list from ``base = (train, test)``.

    Task ``i`` applies the generator's ``i``-th transform to both splits, then
    draws class-stratified train/val/test subsets from a PCG64 stream keyed
    on ``(seed, i)``. The result is a pure function of its arguments.
    """
    train, test = base
    if train.image_shape != test.image_shape:
        raise DataError("train and test images differ in shape")
    _validate(spec.generator, train.num_classes)
    # test ids are shifted past the train ids so the two splits never share an id
    test = Dataset(test.images, test.labels, test.class_names, test.normalization, test.name,
                   test.ids + int(train.ids.max()) + 1 if len(train) else test.ids)
    tasks = []
    for i, (fn, name) in enumerate(_transforms(spec.generator, train.image_shape)):
        rng = np.random.Generator(np.random.PCG64([seed, i]))
        tr, te = fn(train), fn(test)
        val = None
        taken = np.zeros(0, dtype=np.int64)
        if spec.val_size:
            taken = stratified_indices(tr.labels, spec.val_size, rng)
            val = tr.subset(taken)
        tr_idx = stratified_indices(tr.labels, spec.train_size, rng, exclude=taken)
        te_idx = stratified_indices(te.labels, spec.test_size, rng)
        tasks.append(TaskSpec(i, name, tr.subset(tr_idx), te.subset(te_idx), tr.num_classes, val))
    return tasks
