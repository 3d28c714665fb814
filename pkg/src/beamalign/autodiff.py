"""Minimal reverse-mode automatic differentiation on float64 numpy arrays.

A Tape records primitive operations in execution (topological) order; each
record stores the output tensor, the tensor inputs, and a pullback closure
mapping the output cotangent to input cotangents.  backward() walks the
records once in reverse and accumulates gradients on the leaves; a second
backward on the same tape is an error.

Every op in this module also accepts plain numpy arrays (or scalars) and then
simply computes the numpy result without recording, so the same model code
serves both the differentiated training path and the fast evaluation path.
Complex quantities are carried as paired real channels by the callers.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Tensor",
    "backward",
    "add",
    "subtract",
    "multiply",
    "divide",
    "negate",
    "exp",
    "log",
    "sqrt",
    "square",
    "vsum",
    "vmax",
    "matmul",
    "relu",
    "broadcast_to",
    "concatenate",
    "reshape",
    "take",
    "detach",
]


class Tape:
    """Append-only record of primitive ops; one backward pass per tape."""

    __slots__ = ("_records", "_spent")

    def __init__(self):
        self._records = []
        self._spent = False

    def leaf(self, value) -> "Tensor":
        return Tensor(np.array(value, dtype=float), self, leaf=True)

    def _record(self, out, inputs, pullback):
        self._records.append((out, inputs, pullback))

    def __len__(self):
        return len(self._records)


class Tensor:
    """float64 value plus a gradient slot of the same shape."""

    __slots__ = ("value", "grad", "tape", "leaf")

    # make numpy defer to the reflected operators below instead of trying
    # to treat a Tensor as an array element
    __array_ufunc__ = None

    def __init__(self, value, tape, leaf=False):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.tape = tape
        self.leaf = leaf

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, leaf={self.leaf})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return negate(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)


def _value(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


def _tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Tensor):
            if tape is None:
                tape = x.tape
            elif tape is not x.tape:
                raise ValueError("operands live on different tapes")
    return tape


def _unbroadcast(g, shape):
    """Sum the cotangent g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _emit(tape, value, inputs, pullback):
    out = Tensor(value, tape)
    tape._record(out, tuple(t for t in inputs if isinstance(t, Tensor)), pullback)
    return out


def _binary(a, b, fwd, pull_a, pull_b):
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    val = fwd(av, bv)
    if tape is None:
        return val
    grads = []
    if isinstance(a, Tensor):
        grads.append(lambda g: _unbroadcast(pull_a(g, av, bv), av.shape))
    if isinstance(b, Tensor):
        grads.append(lambda g: _unbroadcast(pull_b(g, av, bv), bv.shape))

    def pullback(g):
        return tuple(fn(g) for fn in grads)

    return _emit(tape, val, (a, b), pullback)


def add(a, b):
    return _binary(a, b, lambda x, y: x + y,
                   lambda g, x, y: g, lambda g, x, y: g)


def subtract(a, b):
    return _binary(a, b, lambda x, y: x - y,
                   lambda g, x, y: g, lambda g, x, y: -g)


def multiply(a, b):
    return _binary(a, b, lambda x, y: x * y,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def divide(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def negate(a):
    tape = _tape_of(a)
    if tape is None:
        return -_value(a)
    return _emit(tape, -a.value, (a,), lambda g: (-g,))


def _unary(a, fwd, pull):
    tape = _tape_of(a)
    av = _value(a)
    val = fwd(av)
    if tape is None:
        return val
    return _emit(tape, val, (a,), lambda g: (pull(g, av, val),))


def exp(a):
    return _unary(a, np.exp, lambda g, x, v: g * v)


def log(a):
    if np.any(_value(a) <= 0.0):
        raise ValueError("log of non-positive input")
    return _unary(a, np.log, lambda g, x, v: g / x)


def sqrt(a):
    if np.any(_value(a) <= 0.0):
        raise ValueError("sqrt of non-positive input")
    return _unary(a, np.sqrt, lambda g, x, v: g / (2.0 * v))


def square(a):
    return _unary(a, np.square, lambda g, x, v: 2.0 * g * x)


def relu(a):
    return _unary(a, lambda x: np.maximum(x, 0.0), lambda g, x, v: g * (x > 0.0))


def vsum(a, axis=None, keepdims=False):
    tape = _tape_of(a)
    av = _value(a)
    val = av.sum(axis=axis, keepdims=keepdims)
    if tape is None:
        return val

    def pullback(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, av.shape).copy(),)

    return _emit(tape, val, (a,), pullback)


def vmax(a, axis=-1, keepdims=False):
    """Maximum along an axis with straight-through gradient to the (first)
    max element; returns (max, argmax-indices)."""
    tape = _tape_of(a)
    av = _value(a)
    idx = np.argmax(av, axis=axis)
    val = np.max(av, axis=axis, keepdims=keepdims)
    if tape is None:
        return val, idx

    def pullback(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        out = np.zeros_like(av)
        np.put_along_axis(out, np.expand_dims(idx, axis), g, axis)
        return (out,)

    return _emit(tape, val, (a,), pullback), idx


def matmul(a, b):
    tape = _tape_of(a, b)
    av, bv = _value(a), _value(b)
    if av.ndim > 2 or bv.ndim > 2:
        raise ValueError("matmul supports 1-d and 2-d operands only")
    val = av @ bv
    if tape is None:
        return val

    def grad_a(g):
        if av.ndim == 1 and bv.ndim == 2:
            return bv @ g
        if av.ndim == 2 and bv.ndim == 1:
            return np.outer(g, bv)
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv
        return g @ bv.T

    def grad_b(g):
        if av.ndim == 1 and bv.ndim == 2:
            return np.outer(av, g)
        if av.ndim == 2 and bv.ndim == 1:
            return av.T @ g
        if av.ndim == 1 and bv.ndim == 1:
            return g * av
        return av.T @ g

    grads = []
    if isinstance(a, Tensor):
        grads.append(grad_a)
    if isinstance(b, Tensor):
        grads.append(grad_b)
    return _emit(tape, val, (a, b), lambda g: tuple(fn(g) for fn in grads))


def broadcast_to(a, shape):
    tape = _tape_of(a)
    av = _value(a)
    val = np.broadcast_to(av, shape)
    if tape is None:
        return val
    return _emit(tape, val.copy(), (a,), lambda g: (_unbroadcast(g, av.shape),))


def concatenate(parts, axis=-1):
    tape = _tape_of(*parts)
    vals = [_value(p) for p in parts]
    val = np.concatenate(vals, axis=axis)
    if tape is None:
        return val
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def pullback(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(p for p, src in zip(pieces, parts) if isinstance(src, Tensor))

    return _emit(tape, val, tuple(parts), pullback)


def reshape(a, shape):
    tape = _tape_of(a)
    av = _value(a)
    val = av.reshape(shape)
    if tape is None:
        return val
    return _emit(tape, val, (a,), lambda g: (g.reshape(av.shape),))


def take(a, idx):
    """Basic or integer-array indexing; the pullback scatter-adds."""
    tape = _tape_of(a)
    av = _value(a)
    val = av[idx]
    if tape is None:
        return val

    def pullback(g):
        out = np.zeros_like(av)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(tape, np.array(val), (a,), pullback)


def detach(a):
    """Stop-gradient: the value as a plain array."""
    return np.array(_value(a))


def backward(tape: Tape, loss: Tensor):
    """Accumulate dloss/dleaf on every leaf tensor reachable from `loss`."""
    if tape._spent:
        raise RuntimeError("tape already consumed by a backward pass")
    tape._spent = True
    if not isinstance(loss, Tensor) or loss.tape is not tape:
        raise ValueError("loss does not live on this tape")
    if loss.value.size != 1:
        raise ValueError("loss must be a scalar")
    loss.grad = np.ones_like(loss.value)
    for out, inputs, pullback in reversed(tape._records):
        g = out.grad
        if g is None:
            continue
        for tensor, piece in zip(inputs, pullback(g)):
            if tensor.grad is None:
                tensor.grad = np.zeros_like(tensor.value)
            tensor.grad += piece
        if not out.leaf:
            out.grad = None  # record outputs are fully consumed; free the memory
