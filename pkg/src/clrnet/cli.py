"""Command-line entry point: ``clrnet {pretrain,learn,eval,report,synth}``.

Exit codes: 0 success, 2 config/usage error, 3 state/compatibility error,
4 data/format error.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout
from threadpoolctl import threadpool_limits

from . import __version__
from .arch import preset
from .backbone import TrainHyper, build_network, freeze, pretrain
from .checkpoint import load_adapter, load_backbone, load_checkpoint, save_backbone
from .clr import check_compatible
from .config import ExperimentConfig, from_dict, load_config
from .continual import (
    MATRIX_FILE,
    TaskHyper,
    evaluate_adapter,
    read_matrix_csv,
    run_sequence,
    write_report,
    average_accuracy_curve,
)
from .data import load_idx
from .data.dataset import stratified_indices
from .data.synthetic import RENDERERS, write_synthetic_idx
from .arch import ArchSpec
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    InvariantViolation,
    RangeError,
    ShapeError,
    SpecError,
    StateError,
)
from .experiment import (
    BACKBONE_FILE,
    CONFIG_FILE,
    PRETRAIN_LOG,
    TASKS_FILE,
    build_tasks,
    load_source,
    read_task_names,
    write_tasks_csv,
)

logger = logging.getLogger("clrnet")

EXIT_OK, EXIT_USAGE, EXIT_STATE, EXIT_DATA = 0, 2, 3, 4


class CompatibilityError(StateError):
    """Adapter and backbone do not belong together."""


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, SpecError, RangeError)):
        return EXIT_USAGE
    if isinstance(exc, (StateError, InvariantViolation)):
        return EXIT_STATE
    if isinstance(exc, (DataError, FormatError, ShapeError)):
        return EXIT_DATA
    raise exc


@contextlib.contextmanager
def run_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out_dir / ".lock"))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise StateError(f"{out_dir} is locked by another clrnet process") from None
    try:
        yield
    finally:
        lock.release()


def _config(args) -> ExperimentConfig:
    overrides = dict(out_dir=args.out, seed=args.seed, deterministic=args.deterministic)
    if args.config:
        return load_config(args.config, **overrides)
    return from_dict({}, **overrides)


def _limits(cfg: ExperimentConfig):
    # one BLAS thread gives a fixed reduction order for every matmul
    return threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()


# --- pretrain --------------------------------------------------------------------

def cmd_pretrain(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    bc = cfg.backbone
    with run_lock(out), _limits(cfg):
        if bc.import_path:
            if not Path(bc.import_path).exists():
                raise ConfigError(f"backbone.import_path: path {bc.import_path!r} does not exist")
            state = load_backbone(bc.import_path, freeze=True)
            save_backbone(out / BACKBONE_FILE, state)
            print(f"imported backbone {state.arch.name} ({state.num_parameters():,} params) -> {out / BACKBONE_FILE}")
            return EXIT_OK
        if bc.dataset is None:
            raise ConfigError("backbone.dataset: required unless backbone.import_path is set")
        train, test = load_source(bc.dataset, "backbone.dataset")
        rng = np.random.Generator(np.random.PCG64(bc.seed))
        if bc.val_size:
            val_idx = stratified_indices(train.labels, bc.val_size, rng)
            val = train.subset(val_idx)
            train = train.subset(stratified_indices(train.labels, bc.train_size, rng, exclude=val_idx))
        else:
            # no held-out split requested: the dataset's own test split serves as validation
            val = test
            if bc.train_size is not None:
                train = train.subset(stratified_indices(train.labels, bc.train_size, rng))
        shape = tuple(bc.input_shape) if bc.input_shape else train.image_shape
        arch = preset(bc.arch, shape, train.num_classes)
        state = build_network(arch, bc.seed)
        hyper = TrainHyper(bc.epochs, bc.lr, bc.momentum, bc.batch_size, bc.seed)
        state, log = pretrain(state, train, val, hyper)
        if bc.epochs == 0:
            state.provenance = {"dataset": train.name, "epochs": 0, "seed": bc.seed}
        freeze(state)
        save_backbone(out / BACKBONE_FILE, state)
        with open(out / PRETRAIN_LOG, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_acc", "val_acc"])
            for row in log:
                w.writerow([row["epoch"], repr(row["train_loss"]), repr(row["train_acc"]), repr(row["val_acc"])])
        final = f"val acc {log[-1]['val_acc']:.4f}" if log else "no training (epochs=0)"
        print(f"pretrained {arch.name} on {train.name} for {bc.epochs} epochs, {final} -> {out / BACKBONE_FILE}")
    return EXIT_OK


# --- learn -----------------------------------------------------------------------

def _backbone_for(cfg: ExperimentConfig):
    path = Path(cfg.out_dir) / BACKBONE_FILE
    if not path.exists():
        if cfg.backbone.import_path:
            path = Path(cfg.backbone.import_path)
        else:
            raise StateError(f"{path} not found; run `clrnet pretrain` first or set backbone.import_path")
    return load_backbone(path, freeze=True)


def cmd_learn(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    with run_lock(out), _limits(cfg):
        backbone = _backbone_for(cfg)
        tasks = build_tasks(cfg)
        snapshot = cfg.to_dict()
        cfg_path = out / CONFIG_FILE
        if args.resume and cfg_path.exists() and (out / MATRIX_FILE).exists():
            prior = json.loads(cfg_path.read_text())
            prior.pop("out_dir", None)
            current = dict(snapshot)
            current.pop("out_dir", None)
            if prior != current:
                raise ConfigError(f"{cfg_path}: config differs from the run being resumed")
        cfg_path.write_text(json.dumps(snapshot, indent=2, sort_keys=True) + "\n")
        write_tasks_csv(out / TASKS_FILE, tasks)
        tc = cfg.train
        hyper = TaskHyper(tc.epochs, tc.lr, tc.momentum, tc.batch_size, cfg.global_seed,
                          cfg.clr.train_norm_affine, tc.train_clr)
        _, A = run_sequence(backbone, tasks, cfg.clr.variant, hyper, out_dir=out, resume=args.resume,
                            stop_after=args.stop_after, workers=cfg.workers)
        done = A.completed_rows()
        if done:
            avg = average_accuracy_curve(A)[-1]
            print(f"learned {done}/{len(tasks)} tasks; average accuracy {avg:.4f}; matrix -> {out / MATRIX_FILE}")
        else:
            print(f"learned 0/{len(tasks)} tasks")
    return EXIT_OK


# --- eval ------------------------------------------------------------------------

def cmd_eval(args) -> int:
    backbone = load_backbone(args.backbone, freeze=True)
    adapter = load_adapter(args.adapter)
    try:
        check_compatible(backbone, adapter)
    except SpecError as exc:
        raise CompatibilityError(str(exc)) from None
    if args.task_id is not None and args.task_id != adapter.task_id:
        raise CompatibilityError(f"--task-id {args.task_id} but {args.adapter} holds task {adapter.task_id}")
    tid = adapter.task_id
    if args.images or args.labels:
        if not (args.images and args.labels):
            raise ConfigError("--images and --labels go together")
        for flag, p in (("--images", args.images), ("--labels", args.labels)):
            if not Path(p).exists():
                raise ConfigError(f"{flag}: path {p!r} does not exist")
        _, meta = load_checkpoint(args.adapter)
        norm = meta.get("normalization")
        ds = load_idx(args.images, args.labels, tuple(np.asarray(v) for v in norm) if norm else None)
    elif args.config:
        cfg = load_config(args.config, out_dir=args.out or ".", seed=args.seed)
        tasks = {t.task_id: t for t in build_tasks(cfg)}
        if tid not in tasks:
            raise ConfigError(f"task {tid} is not part of the config's task sequence")
        ds = tasks[tid].split(args.split)
    else:
        raise ConfigError("give task data with --config or --images/--labels")
    if len(ds.labels) and ds.labels.max() >= adapter.num_classes:
        raise DataError(f"labels reach {int(ds.labels.max())} but task {tid} has {adapter.num_classes} classes")
    with threadpool_limits(1):
        correct, total = evaluate_adapter(backbone, adapter, ds)
    print(f"{correct} {total} {correct / total:.6f}")
    return EXIT_OK


# --- report ----------------------------------------------------------------------

def cmd_report(args) -> int:
    run = Path(args.run_dir)
    matrix = run / MATRIX_FILE
    if not matrix.exists():
        raise StateError(f"{matrix} not found; nothing to report")
    A = read_matrix_csv(matrix)
    cfg_data = json.loads((run / CONFIG_FILE).read_text()) if (run / CONFIG_FILE).exists() else {"out_dir": str(run)}
    cfg = from_dict(cfg_data, out_dir=str(run), env={})
    _, meta = load_checkpoint(run / BACKBONE_FILE) if (run / BACKBONE_FILE).exists() else (None, None)
    if meta is None:
        raise StateError(f"{run / BACKBONE_FILE} not found; the report needs the backbone architecture")
    arch = ArchSpec.from_dict(meta["arch"])
    names = read_task_names(run / TASKS_FILE) if (run / TASKS_FILE).exists() else {}
    boot = None
    if cfg.report.bootstrap is not None:
        b = cfg.report.bootstrap
        boot = {"t_values": b.t_values, "n_resamples": b.n_resamples, "with_replacement": b.with_replacement,
                "seed": b.seed}
    paths = write_report(run, A, names, arch, cfg.clr.variant, boot, include_head=cfg.report.include_head)
    print((run / "summary.txt").read_text(), end="")
    print("wrote " + ", ".join(sorted(p.name for p in paths.values())))
    return EXIT_OK


# --- synth -----------------------------------------------------------------------

def cmd_synth(args) -> int:
    paths = write_synthetic_idx(args.out_dir, args.kind, args.train, args.test, args.seed)
    for key in sorted(paths):
        print(f"{key}: {paths[key]}")
    return EXIT_OK


# --- entry point -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--out", help="run directory (overrides out_dir and CLR_OUT_DIR)")
    common.add_argument("--seed", type=int, help="global seed (overrides global_seed and CLR_SEED)")
    common.add_argument("--deterministic", action="store_true", help="force single-threaded, fixed-order math")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="clrnet", description="Channel-wise reprogramming for continual learning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", parents=[common], help="pretrain and freeze a backbone")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("learn", parents=[common], help="learn the task sequence, one adapter per task")
    p.add_argument("--resume", action="store_true", help="continue after the last completed task")
    p.add_argument("--stop-after", type=int, metavar="N", help="stop after N tasks (partial run)")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("eval", parents=[common], help="evaluate one adapter on one task's data")
    p.add_argument("--backbone", required=True)
    p.add_argument("--adapter", required=True)
    p.add_argument("--task-id", type=int)
    p.add_argument("--images", help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="write curves, ledger and summary for a run")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic IDX dataset")
    p.add_argument("kind", choices=sorted(RENDERERS))
    p.add_argument("out_dir")
    p.add_argument("--train", type=int, default=6000)
    p.add_argument("--test", type=int, default=1000)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command == "synth" and args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code or re-raised
        code = exit_code(exc)
        print(f"clrnet {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
