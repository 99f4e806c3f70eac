"""Central finite-difference gradient check in float64."""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, backward

EPS = 1e-5


def _rand(rng, shape, low=-1.0, high=1.0):
    return rng.uniform(low, high, size=shape)


def _away_from_zero(rng, shape, gap=0.1):
    mag = rng.uniform(gap, 1.0, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    # well separated values so no max-pool window is ever tied within 2*EPS
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) - n / 2) * 0.01


def _build(opname, shapes, rng):
    """Return (inputs: dict name -> array, fn: dict of Tensors -> Tensor output)."""
    s = dict(shapes)
    if opname == "conv2d":
        stride, pad = s.get("stride", 1), s.get("pad", 0)
        arrays = {"x": _rand(rng, s["x"]), "weight": _rand(rng, s["weight"]),
                  "bias": _rand(rng, (s["weight"][0],))}
        return arrays, lambda t: ops.conv2d(t["x"], t["weight"], t["bias"], stride=stride, pad=pad)
    if opname == "depthwise_conv2d":
        arrays = {"x": _rand(rng, s["x"]), "kernels": _rand(rng, s["kernels"])}
        return arrays, lambda t: ops.depthwise_conv2d(t["x"], t["kernels"])
    if opname == "linear":
        arrays = {"x": _rand(rng, s["x"]), "weight": _rand(rng, s["weight"]),
                  "bias": _rand(rng, (s["weight"][0],))}
        return arrays, lambda t: ops.linear(t["x"], t["weight"], t["bias"])
    if opname == "relu":
        return {"x": _away_from_zero(rng, s["x"])}, lambda t: ops.relu(t["x"])
    if opname == "maxpool2d":
        k, stride, pad = s.get("k", 2), s.get("stride", None), s.get("pad", 0)
        return {"x": _distinct(rng, s["x"])}, lambda t: ops.maxpool2d(t["x"], k, stride, pad)
    if opname == "global_avgpool":
        return {"x": _rand(rng, s["x"])}, lambda t: ops.global_avgpool(t["x"])
    if opname in ("batchnorm2d_train", "batchnorm2d_eval"):
        c = s["x"][1]
        arrays = {"x": _rand(rng, s["x"]), "gamma": rng.uniform(0.5, 1.5, c),
                  "beta": _rand(rng, (c,))}
        rm, rv = _rand(rng, (c,)), rng.uniform(0.5, 2.0, c)
        mode = opname.split("_")[1]

        def fn(t):
            # running buffers are copied so repeated evaluations see the same state
            return ops.batchnorm2d(t["x"], t["gamma"], t["beta"], rm.copy(), rv.copy(), mode=mode)

        return arrays, fn
    if opname == "softmax_cross_entropy":
        b, k = s["logits"]
        labels = rng.integers(0, k, size=b)
        return {"logits": _rand(rng, s["logits"], -3, 3)}, lambda t: ops.softmax_cross_entropy(t["logits"], labels)
    if opname == "blend":
        arrays = {"weight": rng.uniform(-0.5, 1.5, (1,)), "y": _rand(rng, s["x"]), "x": _rand(rng, s["x"])}
        return arrays, lambda t: ops.blend(t["weight"], t["y"], t["x"])
    if opname == "add":
        arrays = {"a": _rand(rng, s["x"]), "b": _rand(rng, s["x"])}
        return arrays, lambda t: ops.add(t["a"], t["b"])
    raise KeyError(f"no gradient check registered for {opname!r}")


OPS = ("conv2d", "depthwise_conv2d", "linear", "relu", "maxpool2d", "global_avgpool",
       "batchnorm2d_train", "batchnorm2d_eval", "softmax_cross_entropy", "blend", "add")


def gradient_check(opname: str, shapes: dict, seed: int, eps: float = EPS) -> float:
    """Max relative error between analytic and central-difference gradients.

    The op output is reduced to a scalar with a fixed random weighting, so
    every output element contributes a distinct sensitivity. The error per
    entry is ``|a - n| / max(|a|, |n|, 1e-8)``; the maximum over every entry
    of every input is returned.
    """
    rng = np.random.default_rng(seed)
    arrays, fn = _build(opname, shapes, rng)
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}
    probe = None

    def loss_of(values, track):
        nonlocal probe
        tensors = {k: Tensor(v.copy(), requires_grad=track, dtype=np.float64) for k, v in values.items()}
        out = fn(tensors)
        if out.size == 1 and out.ndim == 0:
            return tensors, out
        if probe is None:
            probe = rng.uniform(-1, 1, size=out.shape)
        return tensors, ops.weighted_sum(out, probe)

    tensors, loss = loss_of(arrays, True)
    backward(loss)
    worst = 0.0
    for name, base in arrays.items():
        analytic = tensors[name].grad
        flat = base.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = loss_of(arrays, False)[1].item()
            flat[i] = orig - eps
            fm = loss_of(arrays, False)[1].item()
            flat[i] = orig
            numeric[i] = (fp - fm) / (2 * eps)
        a = analytic.reshape(-1)
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst
