"""Hot convolution and pooling kernels.

The compiled extension (``_ckernels``) is used when it was built; otherwise
the numpy implementations in ``_pykernels`` are loaded. Setting the
environment variable ``CLRNET_PURE_PYTHON=1`` forces the fallback.
"""

import os

import numpy as np

from . import _pykernels as python_backend

compiled_backend = None
if os.environ.get("CLRNET_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

_active = compiled_backend if compiled_backend is not None else python_backend


def backend_name():
    return _active.BACKEND


def compiled_available() -> bool:
    return compiled_backend is not None


def use_backend(name):
    """Switch the active backend (``"cython"`` or ``"python"``); returns the previous name."""
    global _active
    previous = _active.BACKEND
    if name == "python":
        _active = python_backend
    elif name == "cython":
        if compiled_backend is None:
            raise ImportError("compiled kernels are not available; build the extension first")
        _active = compiled_backend
    else:
        raise ValueError(f"unknown kernel backend {name!r}")
    return previous


def _c(a, dtype=None):
    # the compiled kernels take C-contiguous float buffers of one dtype
    return np.ascontiguousarray(a, dtype=dtype if dtype is not None else (a.dtype if a.dtype == np.float64 else np.float32))


def im2col(x, kh, kw, stride, pad):
    return _active.im2col(_c(x), kh, kw, stride, pad)


def col2im(cols, x_shape, kh, kw, stride, pad):
    return _active.col2im(_c(cols), tuple(x_shape), kh, kw, stride, pad)


def depthwise_forward(x, weight, pad):
    return _active.depthwise_forward(_c(x), _c(weight, x.dtype), pad)


def depthwise_backward(x, weight, pad, gout, need_dx=True, need_dw=True):
    return _active.depthwise_backward(_c(x), _c(weight, x.dtype), pad, _c(gout, x.dtype), need_dx, need_dw)


def maxpool_forward(x, k, stride, pad):
    return _active.maxpool_forward(_c(x), k, stride, pad)


def maxpool_backward(gout, arg, x_shape, k, stride, pad):
    return _active.maxpool_backward(_c(gout), np.ascontiguousarray(arg, np.int32), tuple(x_shape), k, stride, pad)
