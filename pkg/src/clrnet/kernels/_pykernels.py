"""Pure numpy implementations of the hot convolution/pooling kernels.

Every function here has a drop-in twin in ``_ckernels.pyx``. Arrays are
NCHW, C-contiguous, float32 or float64; outputs keep the input dtype.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def _pad(x, pad, value=0.0):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=value)


def im2col(x, kh, kw, stride, pad):
    """Unfold ``x`` into a ``(b*oh*ow, c*kh*kw)`` patch matrix."""
    b, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = _pad(x, pad)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # (b, c, oh, ow, kh, kw) -> (b, oh, ow, c, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))
    return cols.reshape(b * oh * ow, c * kh * kw)


def col2im(cols, x_shape, kh, kw, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back onto the input."""
    b, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols6 = cols.reshape(b, oh, ow, c, kh, kw)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                cols6[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)


def depthwise_forward(x, weight, pad):
    """Per-channel cross-correlation; ``weight`` is ``(c, kh, kw)``."""
    b, c, h, w = x.shape
    _, kh, kw = weight.shape
    oh = h + 2 * pad - kh + 1
    ow = w + 2 * pad - kw + 1
    xp = _pad(x, pad)
    out = np.zeros((b, c, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += weight[None, :, i, j, None, None] * xp[:, :, i : i + oh, j : j + ow]
    return out


def depthwise_backward(x, weight, pad, gout, need_dx=True, need_dw=True):
    b, c, h, w = x.shape
    _, kh, kw = weight.shape
    oh, ow = gout.shape[2], gout.shape[3]
    dx = dw = None
    if need_dw:
        xp = _pad(x, pad)
        dw = np.empty_like(weight)
        for i in range(kh):
            for j in range(kw):
                dw[:, i, j] = (gout * xp[:, :, i : i + oh, j : j + ow]).sum(axis=(0, 2, 3))
    if need_dx:
        dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + oh, j : j + ow] += weight[None, :, i, j, None, None] * gout
        dx = np.ascontiguousarray(dxp[:, :, pad : pad + h, pad : pad + w])
    return dx, dw


def maxpool_forward(x, k, stride, pad):
    """Windowed max. Returns the output and the in-window argmax (first max wins)."""
    b, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = _pad(x, pad, value=-np.inf)
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    win = win.reshape(b, c, oh, ow, k * k)
    arg = win.argmax(axis=-1).astype(np.int32)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool_backward(gout, arg, x_shape, k, stride, pad):
    b, c, h, w = x_shape
    oh, ow = gout.shape[2], gout.shape[3]
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=gout.dtype)
    for i in range(k):
        for j in range(k):
            hit = arg == i * k + j
            dxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += np.where(
                hit, gout, 0
            )
    if pad:
        dxp = dxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(dxp)
