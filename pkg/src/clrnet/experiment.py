"""Glue between a config and the library: load datasets, build tasks, name run files."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import DatasetSource, ExperimentConfig, dataset_source
from .data import Dataset, TaskSequenceSpec, TaskSpec, generator_from_dict, load_idx, load_manifest, make_tasks
from .data.dataset import stratified_indices
from .errors import ConfigError

BACKBONE_FILE = "backbone.ckpt"
PRETRAIN_LOG = "pretrain_log.csv"
CONFIG_FILE = "config.json"
TASKS_FILE = "tasks.csv"


def _require(src: DatasetSource, where: str, *names):
    for name in names:
        value = getattr(src, name)
        if not value:
            raise ConfigError(f"{where}.{name}: required for format {src.format!r}")
        if not Path(value).exists():
            raise ConfigError(f"{where}.{name}: path {value!r} does not exist")


def load_source(src: DatasetSource, where: str, shape=None) -> tuple:
    """``(train, test)`` with the test split normalized by the train split's statistics."""
    norm = None
    if src.normalization is not None:
        if len(src.normalization) != 2:
            raise ConfigError(f"{where}.normalization: expected [means, stds]")
        norm = tuple(np.asarray(v, dtype=np.float64) for v in src.normalization)
    if src.format == "idx":
        _require(src, where, "train_images", "train_labels", "test_images", "test_labels")
        name = src.name or Path(src.train_images).name.split("-")[0]
        train = load_idx(src.train_images, src.train_labels, norm, src.class_names, name)
        test = load_idx(src.test_images, src.test_labels, train.normalization, train.class_names, name)
    else:
        _require(src, where, "train_dir", "test_dir")
        shape = tuple(src.shape) if src.shape else shape
        name = src.name or Path(src.train_dir).name
        train = load_manifest(src.train_dir, shape, norm, name)
        test = load_manifest(src.test_dir, shape or train.image_shape, train.normalization, name)
    return train, test


def build_tasks(cfg: ExperimentConfig) -> list:
    """The task sequence a config describes: a generator over one dataset or an explicit list."""
    tc = cfg.tasks
    if tc.datasets is not None:
        tasks = []
        for i, entry in enumerate(tc.datasets):
            where = f"tasks.datasets[{i}]"
            extra = sorted(set(entry) - {"name", "source", "train_size", "test_size"})
            if extra:
                raise ConfigError(f"{where}: unknown key(s) {extra}")
            if "source" not in entry:
                raise ConfigError(f"{where}.source: required")
            train, test = load_source(dataset_source(entry["source"], f"{where}.source"), f"{where}.source")
            rng = np.random.Generator(np.random.PCG64([cfg.global_seed, i]))
            tr = train.subset(stratified_indices(train.labels, entry.get("train_size", tc.train_size), rng))
            te = test.subset(stratified_indices(test.labels, entry.get("test_size", tc.test_size), rng))
            te = Dataset(te.images, te.labels, te.class_names, te.normalization, te.name,
                         te.ids + int(train.ids.max()) + 1)
            tasks.append(TaskSpec(i, entry.get("name", train.name), tr, te, train.num_classes))
        return tasks
    if tc.dataset is None:
        raise ConfigError("tasks.dataset: required when tasks.datasets is not given")
    if tc.generator is None:
        raise ConfigError("tasks.generator: required when tasks.datasets is not given")
    base = load_source(tc.dataset, "tasks.dataset")
    spec = TaskSequenceSpec(generator_from_dict(tc.generator), tc.train_size, tc.test_size, tc.val_size)
    return make_tasks(spec, base, cfg.global_seed)


def write_tasks_csv(path, tasks: list):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "task_name", "num_classes", "train_size", "test_size"])
        for t in tasks:
            w.writerow([t.task_id, t.name, t.num_classes, len(t.train), len(t.test)])


def read_task_names(path) -> dict:
    with open(path, newline="") as fh:
        return {int(r["task_id"]): r["task_name"] for r in csv.DictReader(fh)}
