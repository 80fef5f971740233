"""Reverse-mode automatic differentiation over dense float64 arrays.

A small tape-style engine: every Value remembers the inputs that produced it
and a local vector-Jacobian rule. Node creation ids double as a topological
order, so backward() is a single reverse sweep over the reachable subgraph.
Forward math is plain numpy on float64; ranks stay small (<= 3) because the
models here are desk scale.
"""

from __future__ import annotations

import itertools

import numpy as np

_ids = itertools.count()


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Value:
    """A float64 array plus the backward rule that produced it."""

    __slots__ = ("data", "grad", "_parents", "_vjp", "_id")

    # make numpy defer to the reflected operators instead of broadcasting
    # elementwise over the Value object
    __array_ufunc__ = None

    def __init__(self, data, _parents=(), _vjp=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self._id = next(_ids)

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Value":
        """A copy cut off from the graph (constant from here on)."""
        return Value(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = as_value(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

        return Value(a.data + b.data, (a, b), vjp)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_value(other)
        a, b = self, other

        def vjp(g):
            return (_unbroadcast(g * b.data, a.data.shape),
                    _unbroadcast(g * a.data, b.data.shape))

        return Value(a.data * b.data, (a, b), vjp)

    __rmul__ = __mul__

    def __sub__(self, other):
        other = as_value(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

        return Value(a.data - b.data, (a, b), vjp)

    def __rsub__(self, other):
        return as_value(other).__sub__(self)

    def __neg__(self):
        a = self
        return Value(-a.data, (a,), lambda g: (-g,))

    def __truediv__(self, other):
        other = as_value(other)
        a, b = self, other
        inv = 1.0 / b.data

        def vjp(g):
            return (_unbroadcast(g * inv, a.data.shape),
                    _unbroadcast(-g * a.data * inv * inv, b.data.shape))

        return Value(a.data * inv, (a, b), vjp)

    def __rtruediv__(self, other):
        return as_value(other).__truediv__(self)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only scalar exponents are supported")
        a = self
        return Value(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))

    def __matmul__(self, other):
        other = as_value(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise ValueError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
        if a.data.shape[1] != b.data.shape[0]:
            raise ValueError(f"matmul dimension mismatch: {a.data.shape} @ {b.data.shape}")

        def vjp(g):
            return g @ b.data.T, a.data.T @ g

        return Value(a.data @ b.data, (a, b), vjp)

    def __getitem__(self, idx):
        a = self

        def vjp(g):
            out = np.zeros_like(a.data)
            out[idx] += g
            return (out,)

        return Value(a.data[idx], (a,), vjp)

    # -- reductions / shape --------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, a.data.shape).copy(),)

        return Value(a.data.sum(axis=axis, keepdims=keepdims), (a,), vjp)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        a = self
        old = a.data.shape
        return Value(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))

    def __repr__(self):
        return f"Value(shape={self.data.shape}, id={self._id})"


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def backward(root: Value):
    """Accumulate d(root)/d(node) into .grad for every node reachable from root.

    root must be scalar. Repeated calls keep accumulating; callers reset grads
    between optimization steps.
    """
    if root.data.size != 1:
        raise ValueError(f"backward root must be scalar, got shape {root.data.shape}")
    if not np.all(np.isfinite(root.data)):
        raise FloatingPointError("non-finite value at backward root")

    # Reachable subgraph; creation ids give a topological order.
    nodes = []
    seen = set()
    stack = [root]
    while stack:
        v = stack.pop()
        if id(v) in seen:
            continue
        seen.add(id(v))
        nodes.append(v)
        stack.extend(v._parents)
    nodes.sort(key=lambda v: v._id, reverse=True)

    # Sweep into a local buffer so each call contributes exactly once;
    # results then accumulate into .grad across repeated calls.
    grads = {id(root): np.ones_like(root.data)}
    for v in nodes:
        g = grads.get(id(v))
        if g is None or v._vjp is None:
            continue
        for parent, pg in zip(v._parents, v._vjp(g)):
            pid = id(parent)
            grads[pid] = pg if pid not in grads else grads[pid] + pg
    for v in nodes:
        g = grads.get(id(v))
        if g is not None:
            v.grad = g if v.grad is None else v.grad + g


# ----------------------------------------------------------------------
# elementwise functions (dispatch on Value vs plain numbers/arrays, so the
# dynamics and geometry formulas can be written once)
# ----------------------------------------------------------------------

def tanh(x):
    if not isinstance(x, Value):
        return np.tanh(x)
    out = np.tanh(x.data)
    return Value(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x):
    if not isinstance(x, Value):
        return 1.0 / (1.0 + np.exp(-x))
    out = 1.0 / (1.0 + np.exp(-x.data))
    return Value(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x):
    if not isinstance(x, Value):
        return np.exp(x)
    out = np.exp(x.data)
    return Value(out, (x,), lambda g: (g * out,))


def log(x):
    if not isinstance(x, Value):
        return np.log(x)
    return Value(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x):
    if not isinstance(x, Value):
        return np.sqrt(x)
    out = np.sqrt(x.data)
    return Value(out, (x,), lambda g: (g * 0.5 / out,))


def sin(x):
    if not isinstance(x, Value):
        return np.sin(x)
    return Value(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x):
    if not isinstance(x, Value):
        return np.cos(x)
    return Value(np.cos(x.data), (x,), lambda g: (g * -np.sin(x.data),))


def softplus(x):
    """log(1 + e^x), overflow-safe."""
    if not isinstance(x, Value):
        return np.logaddexp(0.0, x)
    out = np.logaddexp(0.0, x.data)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    return Value(out, (x,), lambda g: (g * sig,))


def absolute(x):
    """|x| with sign subgradient (0 at the kink)."""
    if not isinstance(x, Value):
        return np.abs(x)
    return Value(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def maximum(a, b):
    """Elementwise max; gradient routes to the larger operand (ties -> first)."""
    if not isinstance(a, Value) and not isinstance(b, Value):
        return np.maximum(a, b)
    a, b = as_value(a), as_value(b)
    mask = a.data >= b.data

    def vjp(g):
        return (_unbroadcast(g * mask, a.data.shape),
                _unbroadcast(g * (~mask), b.data.shape))

    return Value(np.maximum(a.data, b.data), (a, b), vjp)


def minimum(a, b):
    if not isinstance(a, Value) and not isinstance(b, Value):
        return np.minimum(a, b)
    a, b = as_value(a), as_value(b)
    mask = a.data <= b.data

    def vjp(g):
        return (_unbroadcast(g * mask, a.data.shape),
                _unbroadcast(g * (~mask), b.data.shape))

    return Value(np.minimum(a.data, b.data), (a, b), vjp)


# ----------------------------------------------------------------------
# structural ops
# ----------------------------------------------------------------------

def concat(values, axis=-1):
    values = [as_value(v) for v in values]
    ax = axis
    sizes = [v.data.shape[ax] for v in values]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=ax))

    return Value(np.concatenate([v.data for v in values], axis=ax), tuple(values), vjp)


def stack(values, axis=0):
    values = [as_value(v) for v in values]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(values)))

    return Value(np.stack([v.data for v in values], axis=axis), tuple(values), vjp)


def broadcast_to(x, shape):
    x = as_value(x)
    old = x.data.shape
    return Value(np.broadcast_to(x.data, shape).copy(), (x,),
                 lambda g: (_unbroadcast(g, old),))


def logsumexp(x, axis=None, keepdims=False):
    """log(sum(exp(x))); the max shift is treated as a constant."""
    x = as_value(x)
    m = np.max(x.data, axis=axis, keepdims=True)
    shifted = x - Value(m)
    s = exp(shifted).sum(axis=axis, keepdims=True)
    out = log(s) + Value(m)
    if keepdims:
        return out
    if axis is None:
        return out.reshape(())
    ax = axis % x.data.ndim
    return out.reshape(tuple(d for i, d in enumerate(out.data.shape) if i != ax))


def softmax(x, axis=-1):
    """Probability vector along `axis`: nonnegative, sums to one."""
    if not isinstance(x, Value):
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
        return e / e.sum(axis=axis, keepdims=True)
    m = Value(np.max(x.data, axis=axis, keepdims=True))
    e = exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)
