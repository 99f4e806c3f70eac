"""Minimal reverse-mode autodiff engine."""

from .gradcheck import gradient_check
from .ops import (
    add,
    batchnorm2d,
    blend,
    conv2d,
    depthwise_conv2d,
    global_avgpool,
    linear,
    maxpool2d,
    relu,
    softmax_cross_entropy,
    tsum,
    weighted_sum,
)
from .optim import SgdState, sgd_step
from .tensor import ComputeGraph, Tensor, backward, no_grad

__all__ = [
    "Tensor", "ComputeGraph", "backward", "no_grad", "SgdState", "sgd_step", "gradient_check",
    "conv2d", "depthwise_conv2d", "linear", "relu", "maxpool2d", "global_avgpool",
    "batchnorm2d", "softmax_cross_entropy", "add", "blend", "tsum", "weighted_sum",
]
