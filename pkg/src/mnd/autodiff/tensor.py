"""Tensor type, tape and the elementwise/reduction primitives.

Every op records its parents and a backward closure on the output tensor
when any input requires a gradient. ``backward`` orders the recorded nodes
into a :class:`Tape` and sweeps it once in reverse.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, ShapeError, UsageError


class Tensor:
    """A float64 array that can carry a gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @classmethod
    def _wrap(cls, arr, parents, backward, op):
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out._op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

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
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        backward(self, grad)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    __array_priority__ = 1000

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return pow(self, k)

    def __abs__(self):
        return abs_(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Topologically ordered record of the nodes feeding a scalar output."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def record(cls, output):
        order, seen = [], set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.nodes)

    def sweep(self, output, seed):
        grads = {id(output): seed}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def backward(loss, grad=None):
    """Populate ``.grad`` on every tensor upstream of ``loss``.

    Leaf gradients accumulate across calls; callers reset them
    (``zero_grad``) between iterations.
    """
    if not loss.requires_grad:
        raise UsageError("backward on a tensor that does not require grad")
    if grad is None:
        if loss.data.size != 1 or loss.ndim != 0:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
    else:
        seed = np.asarray(grad, dtype=np.float64)
        if seed.shape != loss.shape:
            raise ShapeError(f"seed gradient shape {seed.shape} != {loss.shape}")
    tape = Tape.record(loss)
    tape.sweep(loss, seed)
    return tape


# ---------------------------------------------------------------- elementwise


def _pair(a, b, op):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")
    return a, b


def _fold(g, shape):
    # undo scalar broadcast
    return g if g.shape == shape else np.asarray(g.sum())


def add(a, b):
    a, b = _pair(a, b, "add")

    def bw(g):
        return _fold(g, a.shape), _fold(g, b.shape)

    return Tensor._wrap(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = _pair(a, b, "sub")

    def bw(g):
        return _fold(g, a.shape), _fold(-g, b.shape)

    return Tensor._wrap(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = _pair(a, b, "mul")

    def bw(g):
        return _fold(g * b.data, a.shape), _fold(g * a.data, b.shape)

    return Tensor._wrap(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def bw(g):
        return _fold(g / b.data, a.shape), _fold(-g * out / b.data, b.shape)

    return Tensor._wrap(out, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return Tensor._wrap(-a.data, (a,), lambda g: (-g,), "neg")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return Tensor._wrap(a.data * c, (a,), lambda g: (g * c,), "scale")


def abs_(a):
    """|a| with subgradient 0 at exactly 0."""
    a = as_tensor(a)
    return Tensor._wrap(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def pow(a, k):
    a = as_tensor(a)
    k = float(k)
    if k == 1.0:
        return Tensor._wrap(a.data.copy(), (a,), lambda g: (g,), "pow")
    if k != int(k) and np.any(a.data < 0):
        raise DomainError(f"pow: negative base with non-integer exponent {k}")
    out = a.data ** k

    def bw(g):
        return (g * k * a.data ** (k - 1.0),)

    return Tensor._wrap(out, (a,), bw, "pow")


def sqrt(a):
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise DomainError("sqrt of a negative value")
    out = np.sqrt(a.data)

    def bw(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            return (np.where(out > 0, g * 0.5 / np.where(out > 0, out, 1.0), 0.0),)

    return Tensor._wrap(out, (a,), bw, "sqrt")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._wrap(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    return Tensor._wrap(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a, lo=None, hi=None):
    """Clamp; gradient passes only where the input was inside the bounds."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = out == a.data
    return Tensor._wrap(out, (a,), lambda g: (g * inside,), "clip")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._wrap(a.data * mask, (a,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- reductions


def _axes(ndim, axis):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if a.size == 0:
        raise DomainError("sum of an empty tensor")
    axes = _axes(a.ndim, axis)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._wrap(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if a.size == 0:
        raise DomainError("mean of an empty tensor")
    axes = _axes(a.ndim, axis)
    count = float(np.prod([a.shape[ax] for ax in axes]))
    # divide rather than multiply by 1/count: the mean of equal values is exact
    out = a.data.sum(axis=axes, keepdims=keepdims) / count

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return Tensor._wrap(np.asarray(out), (a,), bw, "mean")


# ---------------------------------------------------------------- shape


def reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return Tensor._wrap(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def expand(a, shape):
    """Explicit broadcast of ``a`` (size-1 axes, same rank) up to ``shape``."""
    a = as_tensor(a)
    shape = tuple(shape)
    if a.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(a.shape, shape)):
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}")
    axes = tuple(i for i, (s, t) in enumerate(zip(a.shape, shape)) if s == 1 and t != 1)
    out = np.broadcast_to(a.data, shape)

    def bw(g):
        return (g.sum(axis=axes, keepdims=True),)

    return Tensor._wrap(out, (a,), bw, "expand")
