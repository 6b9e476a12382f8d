"""Dense tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array. Operations (see ops.py) record nodes on the
currently active Tape; Tape.backward walks the node list in reverse and
accumulates gradients into every tensor that requires them. Without an
active tape, operations are plain numpy computations.
"""

from __future__ import annotations

import numpy as np

from .errors import GraphError, NonFiniteError

_TAPE_STACK: list["Tape"] = []


def active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic operators are attached by ops.py at import time.


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value), dtype=dtype)


class Node:
    __slots__ = ("op", "inputs", "outputs", "backward")

    def __init__(self, op, inputs, outputs, backward):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward = backward


class Tape:
    """Append-only record of operations, replayed in reverse by backward()."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def backward(self, root: Tensor):
        if root.data.size != 1:
            raise GraphError(f"backward root must be scalar, got shape {root.shape}")
        if not root.requires_grad:
            raise GraphError("backward root does not require grad (detached graph)")
        on_tape = any(root is out for node in self.nodes for out in node.outputs)
        if not on_tape:
            raise GraphError("backward root was not produced on this tape")
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            if any(out.grad is not None for out in node.outputs):
                node.backward()


def accumulate(t: Tensor, g: np.ndarray):
    """Add g into t.grad, respecting requires_grad."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True) if g.dtype != t.dtype else g.copy()
    else:
        t.grad = t.grad + g


def check_finite(op: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(op)
