"""Experiment configuration: a JSON document mapped onto dataclasses.

Every field has a default except ``out_dir``. Unknown keys anywhere in the
tree raise ``ConfigError`` so a typo cannot silently fall back to a default.
Precedence, highest first: command-line flags, ``CLR_OUT_DIR`` / ``CLR_SEED``
environment variables, the file.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError


@dataclass
class DatasetSource:
    """Where a dataset lives. ``format`` is ``idx`` or ``manifest``."""

    format: str = "idx"
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    train_dir: Optional[str] = None
    test_dir: Optional[str] = None
    shape: Optional[list] = None
    normalization: Optional[list] = None  # [[mean...], [std...]]; computed from train when absent
    class_names: Optional[list] = None
    name: str = ""


@dataclass
class BackboneConfig:
    arch: str = "tinynet"
    input_shape: Optional[list] = None
    dataset: Optional[DatasetSource] = None
    train_size: Optional[int] = None
    val_size: int = 0
    epochs: int = 5
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0
    import_path: Optional[str] = None


@dataclass
class ClrConfig:
    variant: str = "standard"
    train_norm_affine: bool = False


@dataclass
class TasksConfig:
    dataset: Optional[DatasetSource] = None
    generator: Optional[dict] = None
    datasets: Optional[list] = None  # explicit list of {"name", "source", "train_size", "test_size"}
    train_size: Optional[int] = None
    test_size: Optional[int] = None
    val_size: int = 0


@dataclass
class TrainConfig:
    epochs: int = 5
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    train_clr: bool = True


@dataclass
class BootstrapConfig:
    t_values: Optional[list] = None
    n_resamples: int = 50_000
    with_replacement: bool = True
    seed: int = 0


@dataclass
class ReportConfig:
    bootstrap: Optional[BootstrapConfig] = None
    include_head: bool = False


@dataclass
class ExperimentConfig:
    out_dir: str
    global_seed: int = 0
    deterministic: bool = True
    workers: int = 1
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    clr: ClrConfig = field(default_factory=ClrConfig)
    tasks: TasksConfig = field(default_factory=TasksConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    report: ReportConfig = field(default_factory=ReportConfig)

    def to_dict(self) -> dict:
        return _prune(dataclasses.asdict(self))


NESTED = {
    (ExperimentConfig, "backbone"): BackboneConfig,
    (ExperimentConfig, "clr"): ClrConfig,
    (ExperimentConfig, "tasks"): TasksConfig,
    (ExperimentConfig, "train"): TrainConfig,
    (ExperimentConfig, "report"): ReportConfig,
    (BackboneConfig, "dataset"): DatasetSource,
    (TasksConfig, "dataset"): DatasetSource,
    (ReportConfig, "bootstrap"): BootstrapConfig,
}

_TYPES = {"int": int, "float": (int, float), "bool": bool, "str": str}


def _prune(d):
    if isinstance(d, dict):
        return {k: _prune(v) for k, v in d.items() if v is not None}
    return d


def _check_type(cls, f: dataclasses.Field, value, where: str):
    ann = str(f.type).replace("Optional[", "").rstrip("]")
    expected = _TYPES.get(ann)
    if expected is None or value is None:
        return value
    if expected is int and isinstance(value, bool) or expected is (int, float) and isinstance(value, bool):
        raise ConfigError(f"{where}: expected {ann}, got {value!r}")
    if not isinstance(value, expected):
        raise ConfigError(f"{where}: expected {ann}, got {value!r}")
    return float(value) if ann == "float" else value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}; allowed: {sorted(fields)}")
    kwargs = {}
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        sub = NESTED.get((cls, name))
        if sub is not None and value is not None:
            kwargs[name] = _build(sub, value, key)
        else:
            kwargs[name] = _check_type(cls, fields[name], value, key)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def from_dict(data: dict, out_dir: Optional[str] = None, seed: Optional[int] = None,
              deterministic: Optional[bool] = None, env=None) -> ExperimentConfig:
    """Build a config, applying environment and flag overrides on top of ``data``."""
    env = os.environ if env is None else env
    data = dict(data)
    if env.get("CLR_OUT_DIR"):
        data["out_dir"] = env["CLR_OUT_DIR"]
    if env.get("CLR_SEED"):
        try:
            data["global_seed"] = int(env["CLR_SEED"])
        except ValueError:
            raise ConfigError(f"CLR_SEED must be an integer, got {env['CLR_SEED']!r}") from None
    if out_dir is not None:
        data["out_dir"] = out_dir
    if seed is not None:
        data["global_seed"] = seed
    if deterministic:
        data["deterministic"] = True
    if not data.get("out_dir"):
        raise ConfigError("out_dir: required (set it in the file, with --out, or via CLR_OUT_DIR)")
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def load_config(path, **overrides) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(data, **overrides)


def validate(cfg: ExperimentConfig):
    if cfg.workers < 1:
        raise ConfigError("workers: must be >= 1")
    for name, section in (("backbone", cfg.backbone), ("train", cfg.train)):
        if section.epochs < 0:
            raise ConfigError(f"{name}.epochs: must be >= 0")
        if section.lr < 0:
            raise ConfigError(f"{name}.lr: must be >= 0")
        if not 0 <= section.momentum < 1:
            raise ConfigError(f"{name}.momentum: must lie in [0, 1)")
        if section.batch_size < 1:
            raise ConfigError(f"{name}.batch_size: must be >= 1")
    for where, src in (("backbone.dataset", cfg.backbone.dataset), ("tasks.dataset", cfg.tasks.dataset)):
        if src is not None and src.format not in ("idx", "manifest"):
            raise ConfigError(f"{where}.format: must be 'idx' or 'manifest', got {src.format!r}")
    if cfg.tasks.datasets is not None:
        names = [d.get("name") for d in cfg.tasks.datasets]
        if len(set(names)) != len(names):
            raise ConfigError(f"tasks.datasets: duplicate task names {names}")
    if cfg.tasks.datasets is not None and cfg.tasks.generator is not None:
        raise ConfigError("tasks: give either generator or datasets, not both")


def dataset_source(d: dict, where: str) -> DatasetSource:
    return _build(DatasetSource, d, where)
