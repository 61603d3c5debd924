"""Dense-tensor reverse-mode autodiff on numpy arrays.

A Tensor wraps a float32/float64 ndarray and records, per operation, a
closure that routes the output gradient to its operands. backward() on a
scalar walks the tape in reverse topological order. Gradients accumulate
additively across repeated backward() calls; call zero_grad()/reset to
start fresh.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError, ValidationError

_FLOAT_TYPES = (np.float32, np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """An ndarray plus optional gradient, participating in a dynamic tape."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        # Leaves created with requires_grad hold a zero grad from the start,
        # so leaves unreachable from a loss legitimately report zero.
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.name = None
        grad_parents = tuple(p for p in parents if p.requires_grad)
        out.requires_grad = bool(grad_parents)
        out.grad = None
        out._parents = grad_parents
        out._backward = backward if grad_parents else None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        if not isinstance(other, Tensor):
            data = self.data + other

            def bw(g):
                self._accum(g)

            return Tensor._from_op(data, (self,), bw)
        a, b = self, other
        data = a.data + b.data

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.data.shape))

        return Tensor._from_op(data, (a, b), bw)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        data = -self.data

        def bw(g):
            self._accum(-g)

        return Tensor._from_op(data, (self,), bw)

    def __sub__(self, other) -> "Tensor":
        if not isinstance(other, Tensor):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        if not isinstance(other, Tensor):
            data = self.data * other

            def bw(g):
                self._accum(g * other)

            return Tensor._from_op(data, (self,), bw)
        a, b = self, other
        data = a.data * b.data

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._from_op(data, (a, b), bw)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if not isinstance(other, Tensor):
            return self * (1.0 / other)
        a, b = self, other
        data = a.data / b.data

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._from_op(data, (a, b), bw)

    def __rtruediv__(self, other) -> "Tensor":
        data = other / self.data

        def bw(g):
            self._accum(-g * other / (self.data * self.data))

        return Tensor._from_op(data, (self,), bw)

    def __pow__(self, exponent: float) -> "Tensor":
        if isinstance(exponent, Tensor):
            raise ValidationError("pow supports a fixed scalar exponent only")
        data = self.data ** exponent

        def bw(g):
            self._accum(g * exponent * self.data ** (exponent - 1.0))

        return Tensor._from_op(data, (self,), bw)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    # -- reductions / reshaping ------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        data = self.data.sum(axis=axis, keepdims=keepdims)
        in_shape = self.data.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, in_shape).astype(self.data.dtype, copy=False))

        return Tensor._from_op(data, (self,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        data = self.data.reshape(shape)

        def bw(g):
            self._accum(g.reshape(old))

        return Tensor._from_op(data, (self,), bw)

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose expects a 2-d tensor, got shape {self.data.shape}")
        data = self.data.T.copy()

        def bw(g):
            self._accum(g.T)

        return Tensor._from_op(data, (self,), bw)

    @property
    def T(self) -> "Tensor":
        return self.transpose()

    # -- backward --------------------------------------------------------------

    def backward(self) -> None:
        """Populate grads of every reachable requires_grad leaf.

        The loss must be a scalar (exactly one element). Leaf grads
        accumulate additively across repeated backward() calls; flowing
        gradients on interior nodes are per-pass scratch and are released.
        """
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        for node in topo:
            if node._backward is not None:
                node.grad = None
        self._accum(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                if node.grad is not None:
                    node._backward(node.grad)
                node.grad = None


# -- free functions -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product with gradient flow to both operands."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-d operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}")
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return Tensor._from_op(data, (a, b), bw)


def exp(x: Tensor) -> Tensor:
    data = np.exp(x.data)

    def bw(g):
        x._accum(g * data)

    return Tensor._from_op(data, (x,), bw)


def log(x: Tensor) -> Tensor:
    data = np.log(x.data)

    def bw(g):
        x._accum(g / x.data)

    return Tensor._from_op(data, (x,), bw)


def log1p(x: Tensor) -> Tensor:
    data = np.log1p(x.data)

    def bw(g):
        x._accum(g / (1.0 + x.data))

    return Tensor._from_op(data, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    data = np.tanh(x.data)

    def bw(g):
        x._accum(g * (1.0 - data * data))

    return Tensor._from_op(data, (x,), bw)


def absolute(x: Tensor) -> Tensor:
    data = np.abs(x.data)

    def bw(g):
        x._accum(g * np.sign(x.data))

    return Tensor._from_op(data, (x,), bw)


def relu(x: Tensor) -> Tensor:
    data = np.maximum(x.data, 0.0)

    def bw(g):
        x._accum(g * (x.data > 0))

    return Tensor._from_op(data, (x,), bw)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    data = np.empty_like(z)
    pos = z >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    data[~pos] = ez / (1.0 + ez)

    def bw(g):
        x._accum(g * data * (1.0 - data))

    return Tensor._from_op(data, (x,), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`; rows sum to 1."""
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValidationError(f"softmax axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        x._accum((g - dot) * data)

    return Tensor._from_op(data, (x,), bw)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ValidationError(f"log_softmax axis {axis} invalid for shape {x.data.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    data = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bw(g):
        x._accum(g - np.exp(data) * g.sum(axis=axis, keepdims=True))

    return Tensor._from_op(data, (x,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along `axis`; gradient splits back to each operand."""
    tensors = list(tensors)
    if not tensors:
        raise ValidationError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return Tensor._from_op(data, tensors, bw)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along `axis`."""
    if start < 0 or start + length > x.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of shape {x.data.shape}"
        )
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = x.data[idx].copy()

    def bw(g):
        buf = np.zeros_like(x.data)
        buf[idx] = g
        x._accum(buf)

    return Tensor._from_op(data, (x,), bw)


def gather_rows(x: Tensor, indices) -> Tensor:
    """Select rows (axis 0) by integer indices; scatter-adds on backward."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValidationError(f"gather_rows expects 1-d indices, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.data.shape[0]):
        raise ValidationError(
            f"gather_rows index out of range: [{idx.min()}, {idx.max()}] vs {x.data.shape[0]} rows"
        )
    data = x.data[idx].copy()

    def bw(g):
        buf = np.zeros_like(x.data)
        np.add.at(buf, idx, g)
        x._accum(buf)

    return Tensor._from_op(data, (x,), bw)


def mean_scalars(parts: Iterable[Tensor]) -> Tensor:
    """Mean of scalar tensors (used to average per-sample losses)."""
    parts = list(parts)
    if not parts:
        raise ValidationError("no scalars to average")
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total * (1.0 / len(parts))
