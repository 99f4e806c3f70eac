# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Accumulation order mirrors the numpy fallback tap-by-tap (kernel offsets
outermost), so forward convolutions and input gradients agree bitwise
between the two backends. Weight-gradient reductions use a plain running
sum and may differ from numpy's pairwise sum in the last ulp.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()

BACKEND = "cython"


def im2col(floating[:, :, :, ::1] x, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((b * oh * ow, c * kh * kw), dtype=dtype)
    cdef floating[:, ::1] cols = out
    cdef Py_ssize_t n, oy, ox, ch, i, j, row, col, iy, ix
    with nogil:
        for n in range(b):
            for oy in range(oh):
                for ox in range(ow):
                    row = (n * oh + oy) * ow + ox
                    col = 0
                    for ch in range(c):
                        for i in range(kh):
                            iy = oy * stride + i - pad
                            for j in range(kw):
                                ix = ox * stride + j - pad
                                if 0 <= iy < h and 0 <= ix < w:
                                    cols[row, col] = x[n, ch, iy, ix]
                                else:
                                    cols[row, col] = 0
                                col = col + 1
    return out


def col2im(floating[:, ::1] cols, tuple x_shape, int kh, int kw, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = out
    cdef Py_ssize_t n, oy, ox, ch, i, j, row, iy, ix
    cdef Py_ssize_t kk = kh * kw
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for n in range(b):
                    for ch in range(c):
                        for oy in range(oh):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                row = (n * oh + oy) * ow + ox
                                dx[n, ch, iy, ix] += cols[row, ch * kk + i * kw + j]
    return out


def depthwise_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] weight, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t kh = weight.shape[1], kw = weight.shape[2]
    cdef Py_ssize_t oh = h + 2 * pad - kh + 1
    cdef Py_ssize_t ow = w + 2 * pad - kw + 1
    dtype = np.float32 if floating is float else np.float64
    res = np.zeros((b, c, oh, ow), dtype=dtype)
    cdef floating[:, :, :, ::1] out = res
    cdef Py_ssize_t n, ch, oy, ox, i, j, iy, ix, y0, y1, x0, x1
    cdef floating wt
    with nogil:
        for i in range(kh):
            # rows/cols of the output whose tap (i, j) lands inside the input
            y0 = pad - i if pad - i > 0 else 0
            y1 = h + pad - i if h + pad - i < oh else oh
            for j in range(kw):
                x0 = pad - j if pad - j > 0 else 0
                x1 = w + pad - j if w + pad - j < ow else ow
                for n in range(b):
                    for ch in range(c):
                        wt = weight[ch, i, j]
                        for oy in range(y0, y1):
                            iy = oy + i - pad
                            for ox in range(x0, x1):
                                out[n, ch, oy, ox] += wt * x[n, ch, iy, ox + j - pad]
    return res


def depthwise_backward(floating[:, :, :, ::1] x, floating[:, :, ::1] weight, int pad,
                       floating[:, :, :, ::1] gout, bint need_dx=True, bint need_dw=True):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t kh = weight.shape[1], kw = weight.shape[2]
    cdef Py_ssize_t oh = gout.shape[2], ow = gout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    cdef Py_ssize_t n, ch, oy, ox, i, j, y0, y1, x0, x1
    cdef floating wt
    cdef double acc
    cdef floating[:, :, :, ::1] dxv
    cdef floating[:, :, ::1] dwv
    dx = dw = None
    if need_dw:
        dw = np.empty((c, kh, kw), dtype=dtype)
        dwv = dw
        with nogil:
            for ch in range(c):
                for i in range(kh):
                    y0 = pad - i if pad - i > 0 else 0
                    y1 = h + pad - i if h + pad - i < oh else oh
                    for j in range(kw):
                        x0 = pad - j if pad - j > 0 else 0
                        x1 = w + pad - j if w + pad - j < ow else ow
                        acc = 0
                        for n in range(b):
                            for oy in range(y0, y1):
                                for ox in range(x0, x1):
                                    acc = acc + gout[n, ch, oy, ox] * x[n, ch, oy + i - pad, ox + j - pad]
                        dwv[ch, i, j] = <floating>acc
    if need_dx:
        dx = np.zeros((b, c, h, w), dtype=dtype)
        dxv = dx
        with nogil:
            for i in range(kh):
                y0 = pad - i if pad - i > 0 else 0
                y1 = h + pad - i if h + pad - i < oh else oh
                for j in range(kw):
                    x0 = pad - j if pad - j > 0 else 0
                    x1 = w + pad - j if w + pad - j < ow else ow
                    for n in range(b):
                        for ch in range(c):
                            wt = weight[ch, i, j]
                            for oy in range(y0, y1):
                                for ox in range(x0, x1):
                                    dxv[n, ch, oy + i - pad, ox + j - pad] += wt * gout[n, ch, oy, ox]
    return dx, dw


def maxpool_forward(floating[:, :, :, ::1] x, int k, int stride, int pad):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    res = np.empty((b, c, oh, ow), dtype=dtype)
    arg_arr = np.empty((b, c, oh, ow), dtype=np.int32)
    cdef floating[:, :, :, ::1] out = res
    cdef int[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, ch, oy, ox, i, j, iy, ix
    cdef floating best, v
    cdef int besti
    with nogil:
        for n in range(b):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        besti = -1
                        best = 0
                        for i in range(k):
                            iy = oy * stride + i - pad
                            if iy < 0 or iy >= h:
                                continue
                            for j in range(k):
                                ix = ox * stride + j - pad
                                if ix < 0 or ix >= w:
                                    continue
                                v = x[n, ch, iy, ix]
                                if besti < 0 or v > best:
                                    best = v
                                    besti = <int>(i * k + j)
                        out[n, ch, oy, ox] = best
                        arg[n, ch, oy, ox] = besti
    return res, arg_arr


def maxpool_backward(floating[:, :, :, ::1] gout, int[:, :, :, ::1] arg, tuple x_shape,
                     int k, int stride, int pad):
    cdef Py_ssize_t b = x_shape[0], c = x_shape[1], h = x_shape[2], w = x_shape[3]
    cdef Py_ssize_t oh = gout.shape[2], ow = gout.shape[3]
    dtype = np.float32 if floating is float else np.float64
    res = np.zeros((b, c, h, w), dtype=dtype)
    cdef floating[:, :, :, ::1] dx = res
    cdef Py_ssize_t n, ch, oy, ox, iy, ix
    cdef int a
    with nogil:
        for n in range(b):
            for ch in range(c):
                for oy in range(oh):
                    for ox in range(ow):
                        a = arg[n, ch, oy, ox]
                        iy = oy * stride + a // k - pad
                        ix = ox * stride + a % k - pad
                        dx[n, ch, iy, ix] += gout[n, ch, oy, ox]
    return res
