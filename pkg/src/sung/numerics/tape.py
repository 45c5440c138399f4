"""Tape-based reverse-mode differentiation over float64 numpy arrays.

A :class:`Tape` records every operation whose inputs include a :class:`Var`.
Operations on plain ndarrays are evaluated eagerly and never recorded, which
is how inference-only code paths avoid bookkeeping.

    tape = Tape()
    w = tape.param(tree, "w")
    loss = (w * w).sum()
    tape.backward(loss)        # tree.grads["w"] += 2 * w

Gradients flow into the gradient slots of the :class:`ParamTree` that owns
each leaf and accumulate until ``tree.zero_grad()`` is called.
"""
from __future__ import annotations

import numpy as np

from .._ext import ACT_IDENTITY, ACT_RELU, ACT_TANH, kernels as _K


class NonFiniteError(FloatingPointError):
    """Raised by the op that first produced a NaN or infinity."""


class TapeError(RuntimeError):
    pass


def _check(value, op):
    # A sum propagates NaN/Inf, so one reduction screens the whole array.
    if not np.isfinite(value.sum()):
        if np.isfinite(value).all():
            return value
        raise NonFiniteError(f"non-finite value produced by {op}")
    return value


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A differentiable value recorded on a tape."""

    __slots__ = ("value", "grad", "tape", "sink")
    __array_priority__ = 100.0

    def __init__(self, value, tape, sink=None):
        self.value = value
        self.grad = None
        self.tape = tape
        self.sink = sink

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def item(self):
        return float(self.value)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Ordered record of operations for one loss evaluation."""

    def __init__(self):
        self._nodes = []
        self._leaves = {}
        self._consumed = False

    def __len__(self):
        return len(self._nodes)

    def param(self, tree, name):
        """Leaf Var bound to ``tree``'s gradient slot for ``name``."""
        key = (id(tree), name)
        leaf = self._leaves.get(key)
        if leaf is None:
            leaf = Var(tree.values[name], self, sink=(tree, name))
            self._leaves[key] = leaf
        return leaf

    def params(self, tree):
        return {name: self.param(tree, name) for name in tree.names()}

    def watch(self, value):
        """Leaf Var for a free array (gradient readable from ``.grad``)."""
        return Var(np.asarray(value, dtype=np.float64), self)

    def record(self, value, parents, backward):
        out = Var(value, self)
        self._nodes.append((out, parents, backward))
        return out

    def backward(self, loss):
        if not isinstance(loss, Var) or loss.tape is not self:
            raise TapeError("backward: loss was not produced on this tape")
        if self._consumed:
            raise TapeError("backward: tape already consumed")
        if loss.value.size != 1:
            raise TapeError(f"backward: loss must be scalar, got shape {loss.shape}")
        self._consumed = True
        loss.grad = np.ones_like(loss.value)
        for out, parents, fn in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue
            grads = fn(g)
            for parent, pg in zip(parents, grads):
                if parent is None or pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg
        for leaf in self._leaves.values():
            if leaf.grad is None:
                continue
            tree, name = leaf.sink
            slot = tree.grads[name]
            slot += _unbroadcast(leaf.grad, slot.shape)
            tree.mark_grad()
        for leaf in self._leaves.values():
            if leaf.grad is None:
                # Participating trees still count as having gradients (zero).
                leaf.sink[0].mark_grad()
        self._nodes = []


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _val(x):
    return x.value if isinstance(x, Var) else x


def _var(x):
    return x if isinstance(x, Var) else None


def as_value(x):
    return _val(x)


# ---------------------------------------------------------------- elementwise

def add(a, b):
    av, bv = _val(a), _val(b)
    out = _check(np.add(av, bv), "add")
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return tape.record(out, (_var(a), _var(b)), bw)


def sub(a, b):
    av, bv = _val(a), _val(b)
    out = _check(np.subtract(av, bv), "sub")
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return tape.record(out, (_var(a), _var(b)), bw)


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = _check(np.multiply(av, bv), "mul")
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    va, vb = _var(a), _var(b)

    def bw(g):
        return (
            _unbroadcast(g * bv, sa) if va is not None else None,
            _unbroadcast(g * av, sb) if vb is not None else None,
        )

    return tape.record(out, (va, vb), bw)


def div(a, b):
    av, bv = _val(a), _val(b)
    out = _check(np.divide(av, bv), "div")
    tape = _tape_of(a, b)
    if tape is None:
        return out
    sa, sb = np.shape(av), np.shape(bv)
    va, vb = _var(a), _var(b)

    def bw(g):
        return (
            _unbroadcast(g / bv, sa) if va is not None else None,
            _unbroadcast(-g * out / bv, sb) if vb is not None else None,
        )

    return tape.record(out, (va, vb), bw)


def neg(a):
    out = -_val(a)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (-g,))


def square(a):
    av = _val(a)
    out = _check(av * av, "square")
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (2.0 * av * g,))


def exp(a):
    out = _check(np.exp(_val(a)), "exp")
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (g * out,))


def log(a):
    av = _val(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _check(np.log(av), "log")
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (g / av,))


def tanh(a):
    out = _check(np.tanh(_val(a)), "tanh")
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    av = _val(a)
    out = np.maximum(av, 0.0)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (np.where(av > 0.0, g, 0.0),))


def softplus(a):
    av = _val(a)
    out = _check(np.logaddexp(0.0, av), "softplus")
    tape = _tape_of(a)
    if tape is None:
        return out
    sig = 0.5 * (1.0 + np.tanh(0.5 * av))
    return tape.record(out, (a,), lambda g: (g * sig,))


def abs_(a):
    av = _val(a)
    out = np.abs(av)
    tape = _tape_of(a)
    if tape is None:
        return out
    return tape.record(out, (a,), lambda g: (g * np.sign(av),))


def minimum(a, b):
    """Elementwise minimum; ties send the gradient to ``a``."""
    av, bv = _val(a), _val(b)
    out = np.minimum(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    pick_a = av <= bv
    sa, sb = np.shape(av), np.shape(bv)

    def bw(g):
        return (
            _unbroadcast(np.where(pick_a, g, 0.0), sa),
            _unbroadcast(np.where(pick_a, 0.0, g), sb),
        )

    return tape.record(out, (_var(a), _var(b)), bw)


# ----------------------------------------------------------------- reductions

def sum_(a, axis=None):
    av = _val(a)
    out = np.asarray(av.sum(axis=axis))
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = av.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return tape.record(out, (a,), bw)


def mean(a, axis=None):
    av = _val(a)
    out = np.asarray(av.mean(axis=axis))
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = av.shape
    n = av.size if axis is None else av.shape[axis]

    def bw(g):
        if axis is None:
            return (np.full(shape, float(g) / n),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), shape).copy(),)

    return tape.record(out, (a,), bw)


def logsumexp(a, axis=-1):
    """Stable log-sum-exp along ``axis`` (gradient is the softmax)."""
    av = _val(a)
    m = av.max(axis=axis, keepdims=True)
    e = np.exp(av - m)
    s = e.sum(axis=axis, keepdims=True)
    out = _check(np.squeeze(np.log(s) + m, axis=axis), "logsumexp")
    tape = _tape_of(a)
    if tape is None:
        return out
    soft = e / s

    def bw(g):
        return (soft * np.expand_dims(g, axis),)

    return tape.record(out, (a,), bw)


# ------------------------------------------------------------------ structure

def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = _check(av @ bv, "matmul")
    tape = _tape_of(a, b)
    if tape is None:
        return out
    va, vb = _var(a), _var(b)

    def bw(g):
        ga = g @ np.swapaxes(bv, -1, -2) if va is not None else None
        if vb is None:
            gb = None
        elif av.ndim == 1:
            gb = np.outer(av, g)
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        if va is not None and av.ndim == 1 and ga.ndim > 1:
            ga = ga.sum(axis=0)
        return ga, gb

    return tape.record(out, (va, vb), bw)


def getitem(a, index):
    av = _val(a)
    out = av[index]
    tape = _tape_of(a)
    if tape is None:
        return out
    shape = av.shape

    fancy = _needs_add_at(index)

    def bw(g):
        full = np.zeros(shape)
        if fancy:
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return tape.record(out, (a,), bw)


def _needs_add_at(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape):
    av = _val(a)
    out = av.reshape(shape)
    tape = _tape_of(a)
    if tape is None:
        return out
    old = av.shape
    return tape.record(out, (a,), lambda g: (g.reshape(old),))


def concat(parts, axis=-1):
    vals = [_val(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return tape.record(out, tuple(_var(p) for p in parts), bw)


def repeat_rows(a, n):
    """Repeat each row ``n`` times: (B, d) -> (B * n, d), row-blocked."""
    av = _val(a)
    out = np.repeat(av, n, axis=0)
    tape = _tape_of(a)
    if tape is None:
        return out
    rows = av.shape[0]

    def bw(g):
        return (g.reshape(rows, n, *g.shape[1:]).sum(axis=1),)

    return tape.record(out, (a,), bw)


def stop_gradient(a):
    return _val(a)


# ------------------------------------------------------------- fused kernels

_ACT_CODES = {"identity": ACT_IDENTITY, "tanh": ACT_TANH, "relu": ACT_RELU}


def dense(x, w, b, activation="identity"):
    """``activation(x @ w + b)`` through the selected kernel backend."""
    code = _ACT_CODES[activation]
    xv = np.ascontiguousarray(_val(x))
    wv, bv = _val(w), _val(b)
    out = _check(_K.dense_forward(xv, wv, bv, code), "dense")
    tape = _tape_of(x, w, b)
    if tape is None:
        return out
    vx, vw, vb = _var(x), _var(w), _var(b)
    need_w = vw is not None or vb is not None

    def bw(g):
        gx, gw, gb = _K.dense_backward(
            xv, wv, out, np.ascontiguousarray(g), code, vx is not None, need_w
        )
        return gx, gw, gb

    return tape.record(out, (vx, vw, vb), bw)
