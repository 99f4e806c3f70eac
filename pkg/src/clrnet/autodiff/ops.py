"""Differentiable operators.

Only what the reprogrammed CNNs need: convolution (dense and depthwise),
affine, relu, pooling, batch norm, softmax cross-entropy, plus the three
glue ops residual blocks and blended CLR layers require (add, blend, sum).
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import DataError, ShapeError, StateError
from .tensor import Tensor, make_result

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _out_size(size, k, stride, pad, what):
    span = size + 2 * pad - k
    if span < 0:
        raise ShapeError(f"{what}: kernel {k} larger than padded input {size + 2 * pad}")
    if span % stride:
        raise ShapeError(
            f"{what}: output size ({size}+2*{pad}-{k})/{stride}+1 is not an integer"
        )
    return span // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Dense 2-D cross-correlation with zero padding (NCHW / OIHW)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    b, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if wci != ci:
        raise ShapeError(f"conv2d: input has {ci} channels, weight expects {wci}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({co},)")
    if stride < 1 or pad < 0:
        raise ShapeError("conv2d: stride must be positive and pad non-negative")
    oh = _out_size(h, kh, stride, pad, "conv2d")
    ow = _out_size(w, kw, stride, pad, "conv2d")

    cols = kernels.im2col(x.data, kh, kw, stride, pad)
    wmat = weight.data.reshape(co, -1)
    out = (cols @ wmat.T).reshape(b, oh, ow, co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data[None, :, None, None]
    keep_cols = cols if weight.requires_grad else None
    del cols

    def _backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, co)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = (gm.T @ keep_cols).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            gx = kernels.col2im(gm @ wmat, x.shape, kh, kw, stride, pad)
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward, "conv2d")


def depthwise_conv2d(x: Tensor, kernels_: Tensor, pad: int | None = None) -> Tensor:
    """One k x k kernel per channel, no cross-channel mixing, spatial size preserved."""
    if x.ndim != 4 or kernels_.ndim != 4 or kernels_.shape[1] != 1:
        raise ShapeError(f"depthwise_conv2d expects x[b,c,h,w] and kernels[c,1,k,k], got {x.shape}, {kernels_.shape}")
    c = x.shape[1]
    kc, _, kh, kw = kernels_.shape
    if kc != c:
        raise ShapeError(f"depthwise_conv2d: {kc} kernels for {c} channels")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"depthwise_conv2d needs an odd square kernel, got {kh}x{kw}")
    if pad is None:
        pad = kh // 2
    if pad != kh // 2:
        raise ShapeError(f"depthwise_conv2d: pad must be {kh // 2} to preserve size, got {pad}")
    w3 = kernels_.data.reshape(c, kh, kw)
    out = kernels.depthwise_forward(x.data, w3, pad)

    def _backward(g):
        gx, gw = kernels.depthwise_backward(
            x.data, w3, pad, np.ascontiguousarray(g), x.requires_grad, kernels_.requires_grad
        )
        if gw is not None:
            gw = gw.reshape(kernels_.shape)
        return gx, gw

    return make_result(out, (x, kernels_), _backward, "depthwise_conv2d")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: cannot apply weight {weight.shape} to input {x.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x.data @ weight.data.T
    if bias is not None:
        out += bias.data

    def _backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(out, parents, _backward, "linear")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask
    return make_result(out, (x,), lambda g: (g * mask,), "relu")


def maxpool2d(x: Tensor, k: int, stride: int | None = None, pad: int = 0) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-d input, got {x.shape}")
    stride = k if stride is None else stride
    if pad > k // 2:
        raise ShapeError("maxpool2d: pad must be at most half the window")
    _out_size(x.shape[2], k, stride, pad, "maxpool2d")
    _out_size(x.shape[3], k, stride, pad, "maxpool2d")
    out, arg = kernels.maxpool_forward(x.data, k, stride, pad)

    def _backward(g):
        return (kernels.maxpool_backward(np.ascontiguousarray(g), arg, x.shape, k, stride, pad),)

    return make_result(out, (x,), _backward, "maxpool2d")


def global_avgpool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"global_avgpool expects 4-d input, got {x.shape}")
    b, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def _backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype),)

    return make_result(out, (x,), _backward, "global_avgpool")


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean, running_var,
                mode: str = "eval", momentum: float = BN_MOMENTUM, eps: float = BN_EPS) -> Tensor:
    """Per-channel batch normalization.

    ``mode="train"`` normalizes with biased batch statistics and updates the
    running buffers in place (unbiased variance, fixed momentum).
    ``mode="eval"`` uses the running buffers and never touches them.
    """
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d expects 4-d input, got {x.shape}")
    c = x.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.shape != (c,):
            raise ShapeError(f"batchnorm2d: {name} shape {t.shape} != ({c},)")
    rm = running_mean.data if isinstance(running_mean, Tensor) else running_mean
    rv = running_var.data if isinstance(running_var, Tensor) else running_var

    if mode == "train":
        n = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        if rm is not None and rv is not None:
            unbiased = var * (n / max(n - 1, 1))
            rm *= 1 - momentum
            rm += momentum * mean
            rv *= 1 - momentum
            rv += momentum * unbiased
    elif mode == "eval":
        if rm is None or rv is None:
            raise StateError("batchnorm2d in eval mode before running statistics were recorded")
        mean, var = rm, rv
        n = None
    else:
        raise ValueError(f"unknown batchnorm mode {mode!r}")

    dtype = x.dtype
    inv = (1.0 / np.sqrt(var + eps)).astype(dtype)
    xhat = (x.data - mean.astype(dtype)[None, :, None, None]) * inv[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]

    def _backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad or n is not None else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad or n is not None else None
        gx = None
        if x.requires_grad:
            scale = (gamma.data * inv)[None, :, None, None]
            if n is None:
                gx = g * scale
            else:
                gx = scale / n * (n * g - gb[None, :, None, None] - xhat * gg[None, :, None, None])
        return (
            gx,
            gg if gamma.requires_grad else None,
            gb if beta.requires_grad else None,
        )

    return make_result(np.ascontiguousarray(out), (x, gamma, beta), _backward, "batchnorm2d")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    b, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise DataError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.asarray((logsum - z[rows, labels]).mean(), dtype=logits.dtype)

    def _backward(g):
        p = np.exp(z - logsum[:, None])
        p[rows, labels] -= 1
        return (p * (g / b),)

    return make_result(loss, (logits,), _backward, "softmax_cross_entropy")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def blend(weight: Tensor, y: Tensor, x: Tensor) -> Tensor:
    """``weight * y + (1 - weight) * x`` for a scalar tensor ``weight``."""
    if weight.size != 1:
        raise ShapeError(f"blend weight must be a scalar, got {weight.shape}")
    if y.shape != x.shape:
        raise ShapeError(f"blend: shapes {y.shape} and {x.shape} differ")
    a = weight.data.reshape(()).astype(y.dtype)
    one_minus = (np.asarray(1, dtype=y.dtype) - a)
    out = a * y.data + one_minus * x.data

    def _backward(g):
        ga = None
        if weight.requires_grad:
            ga = np.asarray((g * (y.data - x.data)).sum(), dtype=weight.dtype).reshape(weight.shape)
        return ga, g * a, g * one_minus

    return make_result(out, (weight, y, x), _backward, "blend")


def tsum(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),), "sum")


def weighted_sum(x: Tensor, weights) -> Tensor:
    """``sum(x * weights)`` with a constant array; the probe loss of gradient checks."""
    wts = np.asarray(weights, dtype=x.dtype)
    if wts.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {wts.shape} vs input {x.shape}")
    out = np.asarray((x.data * wts).sum(), dtype=x.dtype)
    return make_result(out, (x,), lambda g: (g * wts,), "weighted_sum")
