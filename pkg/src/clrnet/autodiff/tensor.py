"""Tensor and reverse-mode graph machinery."""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ShapeError, StateError

# per-thread so concurrent evaluation workers cannot re-enable each other's recording
_state = threading.local()


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


class Tensor:
    """N-d float buffer with an optional gradient.

    ``data`` is always a C-contiguous float32 array unless a float64 array is
    passed in explicitly (the gradient-check mode). Tensors produced by ops
    remember their parents and a backward closure; leaves do not.
    """

    __slots__ = ("data", "grad", "requires_grad", "frozen", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is None:
            dtype = np.float64 if arr.dtype == np.float64 else np.float32
        self.data = np.asarray(arr, dtype=dtype, order="C")
        if any(d < 1 for d in self.data.shape):
            raise ShapeError(f"tensor dimensions must be >= 1, got {self.data.shape}")
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.frozen = False
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0)

    def freeze(self):
        """Make the tensor permanently read-only and non-trainable."""
        self.requires_grad = False
        self.frozen = True
        self.grad = None
        self.data.flags.writeable = False
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    def __add__(self, other):
        from .ops import add

        return add(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag}, op={self.op})"


def make_result(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap an op output, recording graph edges only when some input needs grad."""
    out = Tensor(data, dtype=data.dtype)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


@dataclass
class GraphNode:
    op: str
    inputs: tuple
    output: Tensor


@dataclass
class ComputeGraph:
    """Topologically ordered view of everything a loss depends on."""

    nodes: list = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "ComputeGraph":
        order: list[Tensor] = []
        index: dict[int, int] = {}
        stack = [(out, False)]
        seen = set()
        while stack:
            t, expanded = stack.pop()
            if expanded:
                index[id(t)] = len(order)
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        nodes = [GraphNode(t.op, tuple(index[id(p)] for p in t._parents), t) for t in order]
        return cls(nodes)

    def __len__(self):
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[ComputeGraph] = None) -> ComputeGraph:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable trainable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StateError("loss does not depend on any tensor that requires grad")
    if graph is None:
        graph = ComputeGraph.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        t = node.output
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t._backward is None:
            if t.requires_grad:
                if t.grad is None:
                    t.grad = np.zeros_like(t.data)
                t.grad += g
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg
    return graph
