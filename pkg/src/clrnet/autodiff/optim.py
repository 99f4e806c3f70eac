"""SGD with heavy-ball momentum."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, StateError


@dataclass
class SgdState:
    learning_rate: float
    momentum: float = 0.0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        # lr == 0 is accepted: it is the "no update" control used in tests
        if self.learning_rate < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")


def sgd_step(params, state: SgdState):
    """``v <- momentum * v + grad``; ``p <- p - lr * v``; then zero the grads.

    Velocity buffers are matched to ``params`` by position and created on
    the first call. A parameter that received no gradient is treated as
    having a zero gradient.
    """
    params = list(params)
    for p in params:
        if p.frozen or not p.requires_grad:
            raise StateError("sgd_step on a frozen or non-trainable tensor")
    if not state.velocity:
        state.velocity = [np.zeros_like(p.data) for p in params]
    if len(state.velocity) != len(params):
        raise ShapeError(f"optimizer holds {len(state.velocity)} buffers for {len(params)} params")
    lr = np.asarray(state.learning_rate, dtype=params[0].dtype) if params else 0
    mom = np.asarray(state.momentum, dtype=params[0].dtype) if params else 0
    for p, v in zip(params, state.velocity):
        if v.shape != p.shape:
            raise ShapeError(f"velocity shape {v.shape} does not match parameter {p.shape}")
        if p.grad is not None:
            v *= mom
            v += p.grad
            p.grad.fill(0)
        else:
            v *= mom
        p.data -= lr * v
