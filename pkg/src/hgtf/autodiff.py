"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records a vector-Jacobian closure per op;
backward() walks the tape in reverse topological order. The module-level
math functions (log, exp, logsumexp, ...) accept either Tensors or plain
arrays and return the same kind, so model formulas can be written once and
evaluated with or without gradients.
"""

from __future__ import annotations

import numpy as np
from scipy import special as sp


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad over axes that were broadcast to reach its shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if keep:
        grad = grad.sum(axis=keep, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Node in the autodiff tape: a value plus parents and a VJP closure."""

    # keep numpy from absorbing us into object arrays; reflected ops fire instead
    __array_ufunc__ = None
    __slots__ = ("value", "grad", "_parents", "_vjp")

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape})"

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into every node's .grad; self must be scalar."""
        if self.value.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node.grad is None or node._vjp is None:
                continue
            for parent, contrib in zip(node._parents, node._vjp(node.grad)):
                if contrib is None:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.value)
                parent.grad = parent.grad + contrib

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value + other.value, (self, other))
        out._vjp = lambda g: (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.value, (self,))
        out._vjp = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-_as_tensor(other))

    def __rsub__(self, other):
        return _as_tensor(other) + (-self)

    def __mul__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value * other.value, (self, other))
        out._vjp = lambda g: (
            _unbroadcast(g * other.value, self.shape),
            _unbroadcast(g * self.value, other.shape),
        )
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _as_tensor(other)
        out = Tensor(self.value / other.value, (self, other))
        out._vjp = lambda g: (
            _unbroadcast(g / other.value, self.shape),
            _unbroadcast(-g * self.value / other.value**2, other.shape),
        )
        return out

    def __rtruediv__(self, other):
        return _as_tensor(other) / self

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only constant exponents are supported")
        out = Tensor(self.value**exponent, (self,))
        out._vjp = lambda g: (g * exponent * self.value ** (exponent - 1),)
        return out

    def __matmul__(self, other):
        other = _as_tensor(other)
        a, b = self.value, other.value
        out = Tensor(a @ b, (self, other))

        def vjp(g):
            if a.ndim == 2 and b.ndim == 2:
                return g @ b.T, a.T @ g
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            if a.ndim == 1 and b.ndim == 2:
                return g @ b.T, np.outer(a, g)
            return g * b, g * a  # 1-D dot

        out._vjp = vjp
        return out

    def __rmatmul__(self, other):
        return _as_tensor(other) @ self

    def __getitem__(self, key):
        out = Tensor(self.value[key], (self,))

        def vjp(g):
            full = np.zeros_like(self.value)
            np.add.at(full, key, g)
            return (full,)

        out._vjp = vjp
        return out

    @property
    def T(self):
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def is_tensor(x) -> bool:
    return isinstance(x, Tensor)


def value_of(x) -> np.ndarray:
    """Plain ndarray view of either a Tensor or array-like."""
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unary(x, fn, dfn):
    if isinstance(x, Tensor):
        out = Tensor(fn(x.value), (x,))
        out._vjp = lambda g: (g * dfn(x.value),)
        return out
    return fn(np.asarray(x, dtype=np.float64))


def log(x):
    return _unary(x, np.log, lambda v: 1.0 / v)


def exp(x):
    return _unary(x, np.exp, np.exp)


def sqrt(x):
    return _unary(x, np.sqrt, lambda v: 0.5 / np.sqrt(v))


def cos(x):
    return _unary(x, np.cos, lambda v: -np.sin(v))


def sin(x):
    return _unary(x, np.sin, np.cos)


def sigmoid(x):
    return _unary(x, sp.expit, lambda v: sp.expit(v) * (1.0 - sp.expit(v)))


def softplus(x):
    return _unary(x, lambda v: np.logaddexp(0.0, v), sp.expit)


def gammaln(x):
    return _unary(x, sp.gammaln, sp.digamma)


def clamp(x, lo=None, hi=None):
    """Clip values; gradient passes through only where unclipped."""

    def fn(v):
        return np.clip(v, lo, hi)

    def dfn(v):
        ok = np.ones_like(v)
        if lo is not None:
            ok = ok * (v >= lo)
        if hi is not None:
            ok = ok * (v <= hi)
        return ok

    return _unary(x, fn, dfn)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors np.sum for dispatch
    if not isinstance(x, Tensor):
        return np.sum(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    out = Tensor(x.value.sum(axis=axis, keepdims=keepdims), (x,))

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).copy(),)

    out._vjp = vjp
    return out


def mean(x, axis=None, keepdims=False):
    n = value_of(x).size if axis is None else value_of(x).shape[axis]
    return sum(x, axis=axis, keepdims=keepdims) / float(n)


def cumsum(x, axis=None):
    if not isinstance(x, Tensor):
        return np.cumsum(np.asarray(x, dtype=np.float64), axis=axis)
    out = Tensor(np.cumsum(x.value, axis=axis), (x,))

    def vjp(g):
        ax = axis if axis is not None else 0
        return (np.flip(np.cumsum(np.flip(g, ax), axis=ax), ax),)

    out._vjp = vjp
    return out


def logsumexp(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return sp.logsumexp(np.asarray(x, dtype=np.float64), axis=axis, keepdims=keepdims)
    v = x.value
    m = np.max(v, axis=axis, keepdims=True)
    ex = np.exp(v - m)
    z = ex.sum(axis=axis, keepdims=True)
    res = m + np.log(z)
    if not keepdims and axis is not None:
        res = np.squeeze(res, axis=axis)
    elif not keepdims:
        res = np.squeeze(res)
    out = Tensor(res, (x,))
    weights = ex / z

    def vjp(g):
        if axis is None:
            return (g * weights,)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (gg * weights,)

    out._vjp = vjp
    return out


def concat(parts, axis=0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts], axis=axis)
    tensors = [_as_tensor(p) for p in parts]
    out = Tensor(np.concatenate([t.value for t in tensors], axis=axis), tuple(tensors))
    sizes = [t.value.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    out._vjp = vjp
    return out


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(np.asarray(x, dtype=np.float64), shape)
    out = Tensor(x.value.reshape(shape), (x,))
    out._vjp = lambda g: (g.reshape(x.shape),)
    return out


def transpose(x):
    if not isinstance(x, Tensor):
        return np.asarray(x, dtype=np.float64).T
    out = Tensor(x.value.T, (x,))
    out._vjp = lambda g: (g.T,)
    return out


def diagflat(v):
    if not isinstance(v, Tensor):
        return np.diagflat(np.asarray(v, dtype=np.float64))
    out = Tensor(np.diagflat(v.value), (v,))
    out._vjp = lambda g: (np.diagonal(g).copy(),)
    return out
