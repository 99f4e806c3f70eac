"""Backbone construction, supervised pretraining, and freezing."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .arch import ArchSpec, Conv, GlobalAvgPool, Head, MaxPool, ResidualBlock
from .autodiff import (
    SgdState,
    Tensor,
    add,
    backward,
    batchnorm2d,
    conv2d,
    global_avgpool,
    linear,
    maxpool2d,
    no_grad,
    relu,
    sgd_step,
    softmax_cross_entropy,
)
from .errors import DataError, StateError

logger = logging.getLogger(__name__)

BUFFER_SUFFIXES = (".running_mean", ".running_var")


def is_buffer(name: str) -> bool:
    return name.endswith(BUFFER_SUFFIXES)


@dataclass
class TrainHyper:
    epochs: int = 5
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 64
    seed: int = 0


@dataclass
class BackboneState:
    arch: ArchSpec
    params: dict
    frozen: bool = False
    provenance: dict = field(default_factory=dict)

    def trainable(self) -> list:
        return [t for name, t in self.params.items() if not is_buffer(name)]

    def num_parameters(self) -> int:
        return sum(t.size for name, t in self.params.items() if not is_buffer(name))


def _he_normal(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def build_network(arch: ArchSpec, seed: int = 0) -> BackboneState:
    """Allocate and initialize every parameter of ``arch`` from a PCG64 stream.

    Conv and linear weights are He-normal (fan-in), biases zero, norm
    gamma one and beta zero; running statistics start at mean 0, var 1.
    Tensors are drawn in network order, so the result is a pure function of
    ``(arch, seed)``.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, Tensor] = {}
    for site in arch.conv_sites():
        spec = site.spec
        fan_in = site.in_ch * spec.k * spec.k
        params[f"{site.path}.weight"] = Tensor(
            _he_normal(rng, (spec.out_ch, site.in_ch, spec.k, spec.k), fan_in), requires_grad=True
        )
        if spec.has_bias:
            params[f"{site.path}.bias"] = Tensor(np.zeros(spec.out_ch, np.float32), requires_grad=True)
        if spec.has_norm:
            params[f"{site.path}.bn.gamma"] = Tensor(np.ones(spec.out_ch, np.float32), requires_grad=True)
            params[f"{site.path}.bn.beta"] = Tensor(np.zeros(spec.out_ch, np.float32), requires_grad=True)
            params[f"{site.path}.bn.running_mean"] = Tensor(np.zeros(spec.out_ch, np.float32))
            params[f"{site.path}.bn.running_var"] = Tensor(np.ones(spec.out_ch, np.float32))
    feat = arch.feature_dim
    n = arch.head.num_classes
    params["head.weight"] = Tensor(_he_normal(rng, (n, feat), feat), requires_grad=True)
    params["head.bias"] = Tensor(np.zeros(n, np.float32), requires_grad=True)
    return BackboneState(arch, params)


# --- forward ---------------------------------------------------------------------

ConvHook = Callable[[str, Tensor], Tensor]


def run_layers(state: BackboneState, x: Tensor, mode: str = "eval",
               conv_hook: Optional[ConvHook] = None, norm_affine: Optional[dict] = None) -> Tensor:
    """Run every layer except the head and return pooled features ``[b, f]``.

    ``conv_hook(path, out)`` is applied to each conv output before its norm
    layer; ``norm_affine`` maps a conv path to replacement ``(gamma, beta)``
    tensors. Both exist so task adapters can wrap the frozen network without
    copying it.
    """
    if state.frozen and mode != "eval":
        raise StateError("a frozen backbone only runs in eval mode")
    p = state.params

    def conv_block(path: str, spec: Conv, h: Tensor) -> Tensor:
        h = conv2d(h, p[f"{path}.weight"], p.get(f"{path}.bias"), stride=spec.stride, pad=spec.padding)
        if conv_hook is not None:
            h = conv_hook(path, h)
        if spec.has_norm:
            gamma, beta = p[f"{path}.bn.gamma"], p[f"{path}.bn.beta"]
            if norm_affine is not None and path in norm_affine:
                gamma, beta = norm_affine[path]
            h = batchnorm2d(h, gamma, beta, p[f"{path}.bn.running_mean"], p[f"{path}.bn.running_var"], mode=mode)
        if spec.has_relu:
            h = relu(h)
        return h

    h = x
    for i, layer in enumerate(state.arch.layers):
        path = f"layers.{i}"
        if isinstance(layer, Conv):
            h = conv_block(path, layer, h)
        elif isinstance(layer, MaxPool):
            h = maxpool2d(h, layer.k, layer.stride or layer.k, layer.pad)
        elif isinstance(layer, ResidualBlock):
            branch = h
            for j, spec in enumerate(layer.convs):
                branch = conv_block(f"{path}.convs.{j}", spec, branch)
            short = h if layer.shortcut is None else conv_block(f"{path}.shortcut", layer.shortcut, h)
            h = add(branch, short)
            if layer.out_relu:
                h = relu(h)
        elif isinstance(layer, GlobalAvgPool):
            h = global_avgpool(h)
        elif isinstance(layer, Head):
            break
    return h


def forward_features(state: BackboneState, x) -> Tensor:
    """Pooled feature vector of the (usually frozen) backbone, no graph recorded."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    with no_grad():
        return run_layers(state, x, mode="eval")


def forward(state: BackboneState, x, mode: str = "eval") -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    feats = run_layers(state, x, mode=mode)
    return linear(feats, state.params["head.weight"], state.params["head.bias"])


def predict(logits_fn, images: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class per image; ties go to the lowest class index."""
    preds = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = logits_fn(Tensor(images[start:start + batch_size]))
            preds.append(np.argmax(logits.data, axis=1))
    return np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)


# --- training --------------------------------------------------------------------

def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def pretrain(state: BackboneState, train, val, hyper: TrainHyper):
    """Supervised SGD on softmax cross-entropy. Returns ``(state, per-epoch log)``."""
    if state.frozen:
        raise StateError("cannot pretrain a frozen backbone")
    n_cls = state.arch.head.num_classes
    for ds, name in ((train, "train"), (val, "val")):
        if ds is not None and len(ds.labels) and (ds.labels.min() < 0 or ds.labels.max() >= n_cls):
            raise DataError(f"{name} labels fall outside the head's {n_cls} classes")
    params = state.trainable()
    opt = SgdState(hyper.lr, hyper.momentum)
    rng = np.random.Generator(np.random.PCG64(hyper.seed))
    log = []
    for epoch in range(hyper.epochs):
        total_loss, correct, seen = 0.0, 0, 0
        for idx in iterate_minibatches(len(train.labels), hyper.batch_size, rng):
            xb, yb = Tensor(train.images[idx]), train.labels[idx]
            logits = forward(state, xb, mode="train")
            loss = softmax_cross_entropy(logits, yb)
            backward(loss)
            sgd_step(params, opt)
            total_loss += loss.item() * len(idx)
            correct += int((np.argmax(logits.data, axis=1) == yb).sum())
            seen += len(idx)
        row = {"epoch": epoch + 1, "train_loss": total_loss / max(seen, 1),
               "train_acc": correct / max(seen, 1)}
        row["val_acc"] = accuracy(state, val) if val is not None else float("nan")
        logger.info("pretrain epoch %d: loss %.4f train %.4f val %.4f", row["epoch"],
                    row["train_loss"], row["train_acc"], row["val_acc"])
        log.append(row)
    state.provenance = {
        "dataset": getattr(train, "name", "unknown"),
        "epochs": hyper.epochs,
        "seed": hyper.seed,
        "train_acc": log[-1]["train_acc"] if log else None,
        "val_acc": log[-1]["val_acc"] if log else None,
    }
    return state, log


def accuracy(state: BackboneState, ds) -> float:
    preds = predict(lambda xb: forward(state, xb), ds.images)
    return float((preds == ds.labels).mean()) if len(ds.labels) else float("nan")


def freeze(state: BackboneState) -> BackboneState:
    """Mark every tensor read-only; idempotent."""
    for t in state.params.values():
        if not t.frozen:
            t.freeze()
    state.frozen = True
    if not state.provenance:
        state.provenance = {"dataset": "none", "epochs": 0}
    return state


def state_hash(state: BackboneState) -> str:
    """SHA-256 over every tensor (name, shape, bytes), in name order."""
    h = hashlib.sha256()
    for name in sorted(state.params):
        t = state.params[name]
        h.update(name.encode())
        h.update(str(t.shape).encode())
        h.update(t.data.tobytes())
    return h.hexdigest()
