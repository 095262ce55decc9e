"""Reverse-mode automatic differentiation over dense numpy arrays.

A Tensor wraps one ndarray plus an optional gradient of the same shape.
Every differentiable operation records its parents and a backward
closure on the result; ``Tensor.backward()`` on a scalar loss walks the
recorded graph once in reverse topological order, so gradients from
shared parameters accumulate across all use sites.

float32 is the working precision for training.  float64 inputs stay
float64 end to end, which is what makes central finite-difference
checks at 1e-3 relative tolerance meaningful.
"""
from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

__all__ = ["Tensor", "ShapeError", "no_grad", "concat"]

_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


class ShapeError(ValueError):
    """Shape-incompatible operands; message names the operation."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _tracked(t: "Tensor") -> bool:
    # gradient must flow into t: either a leaf that wants grads or an
    # interior node with its own backward rule
    return t.requires_grad or t._backward is not None


def _accum(t: "Tensor", g: np.ndarray) -> None:
    if not _tracked(t):
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _lift(x, dtype) -> "Tensor":
        if isinstance(x, Tensor):
            return x
        return Tensor(np.asarray(x, dtype=dtype))

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"]) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(_tracked(p) for p in parents):
            out._parents = tuple(parents)
        return out

    # -- basic properties ------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_err(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- backward pass ---------------------------------------------------------

    def backward(self) -> None:
        """Reverse pass from a scalar node, accumulating into .grad."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:  # iterative DFS: conv graphs exceed the recursion limit
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- elementwise arithmetic (numpy broadcasting semantics) -----------------

    def __add__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor._node(self.data + other.data, (self, other))
        if out._parents:
            def _bw(a=self, b=other, o=out):
                _accum(a, _unbroadcast(o.grad, a.data.shape))
                _accum(b, _unbroadcast(o.grad, b.data.shape))
            out._backward = _bw
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor._node(self.data * other.data, (self, other))
        if out._parents:
            def _bw(a=self, b=other, o=out):
                _accum(a, _unbroadcast(o.grad * b.data, a.data.shape))
                _accum(b, _unbroadcast(o.grad * a.data, b.data.shape))
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __sub__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor._node(self.data - other.data, (self, other))
        if out._parents:
            def _bw(a=self, b=other, o=out):
                _accum(a, _unbroadcast(o.grad, a.data.shape))
                _accum(b, _unbroadcast(-o.grad, b.data.shape))
            out._backward = _bw
        return out

    def __rsub__(self, other):
        return Tensor._lift(other, self.dtype).__sub__(self)

    def __truediv__(self, other):
        other = Tensor._lift(other, self.dtype)
        out = Tensor._node(self.data / other.data, (self, other))
        if out._parents:
            def _bw(a=self, b=other, o=out):
                _accum(a, _unbroadcast(o.grad / b.data, a.data.shape))
                _accum(b, _unbroadcast(-o.grad * a.data / (b.data * b.data), b.data.shape))
            out._backward = _bw
        return out

    def __rtruediv__(self, other):
        return Tensor._lift(other, self.dtype).__truediv__(self)

    def __neg__(self):
        out = Tensor._node(-self.data, (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, -o.grad)
            out._backward = _bw
        return out

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out = Tensor._node(self.data ** p, (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, o.grad * p * a.data ** (p - 1))
            out._backward = _bw
        return out

    # -- elementwise functions --------------------------------------------------

    def exp(self):
        out = Tensor._node(np.exp(self.data), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, o.grad * o.data)
            out._backward = _bw
        return out

    def log(self):
        out = Tensor._node(np.log(self.data), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, o.grad / a.data)
            out._backward = _bw
        return out

    def sqrt(self):
        out = Tensor._node(np.sqrt(self.data), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                # guarded so that zero incoming gradient at sqrt(0) stays zero
                _accum(a, o.grad / np.maximum(2.0 * o.data, 1e-30))
            out._backward = _bw
        return out

    def sigmoid(self):
        out = Tensor._node(1.0 / (1.0 + np.exp(-self.data)), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, o.grad * o.data * (1.0 - o.data))
            out._backward = _bw
        return out

    def relu(self):
        out = Tensor._node(np.maximum(self.data, 0), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, o.grad * (a.data > 0))
            out._backward = _bw
        return out

    # -- reductions --------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor._node(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                g = o.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                _accum(a, np.broadcast_to(g, a.data.shape).copy())
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int = -1, keepdims: bool = False):
        """Max along one axis; gradient routes to the first argmax."""
        idx = np.argmax(self.data, axis=axis)
        out_data = np.take_along_axis(self.data, np.expand_dims(idx, axis), axis=axis)
        if not keepdims:
            out_data = np.squeeze(out_data, axis=axis)
        out = Tensor._node(out_data, (self,))
        if out._parents:
            def _bw(a=self, o=out):
                g = o.grad if keepdims else np.expand_dims(o.grad, axis)
                gx = np.zeros_like(a.data)
                np.put_along_axis(gx, np.expand_dims(idx, axis), g, axis=axis)
                _accum(a, gx)
            out._backward = _bw
        return out

    # -- structural ops ------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._node(self.data.reshape(shape), (self,))
        if out._parents:
            def _bw(a=self, o=out):
                _accum(a, o.grad.reshape(a.data.shape))
            out._backward = _bw
        return out

    def transpose(self, *axes):
        ax = axes if axes else None
        out = Tensor._node(np.transpose(self.data, ax), (self,))
        if out._parents:
            inv = np.argsort(ax) if ax else None
            def _bw(a=self, o=out):
                _accum(a, np.transpose(o.grad, inv))
            out._backward = _bw
        return out

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out = Tensor._node(self.data[idx], (self,))
        if out._parents:
            def _bw(a=self, o=out):
                gx = np.zeros_like(a.data)
                np.add.at(gx, idx, o.grad)
                _accum(a, gx)
            out._backward = _bw
        return out

    def __matmul__(self, other):
        other = Tensor._lift(other, self.dtype)
        if self.ndim != 2 or other.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul: incompatible shapes {self.shape} @ {other.shape}")
        out = Tensor._node(self.data @ other.data, (self, other))
        if out._parents:
            def _bw(a=self, b=other, o=out):
                _accum(a, o.grad @ b.data.T)
                _accum(b, a.data.T @ o.grad)
            out._backward = _bw
        return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in tensors]
    out = Tensor._node(np.concatenate([t.data for t in tensors], axis=axis), tensors)
    if out._parents:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def _bw(ts=tensors, o=out):
            for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
                sl = [slice(None)] * o.grad.ndim
                sl[axis] = slice(lo, hi)
                _accum(t, o.grad[tuple(sl)])
        out._backward = _bw
    return out


def _scalar_err(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.data.shape}")
