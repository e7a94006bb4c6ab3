"""Minimal tape-based reverse-mode differentiation over numpy arrays.

Every op appends a node to the active :class:`Tape`; nodes are created in
topological order, so ``backward`` walks the tape once in reverse.
"""

import numpy as np


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Var:
    __slots__ = ("value", "grad", "tape", "parents", "requires_grad")

    def __init__(self, value, tape, parents=(), requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.tape = tape
        # (parent, fn mapping this node's grad to the parent's contribution)
        self.parents = parents
        self.requires_grad = requires_grad or any(p.requires_grad for p, _ in parents)

    @property
    def shape(self):
        return self.value.shape

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


class Tape:
    def __init__(self):
        self.nodes = []

    def var(self, value, requires_grad=False):
        v = Var(value, self, (), requires_grad)
        self.nodes.append(v)
        return v

    def const(self, value):
        return self.var(value, False)

    def node(self, value, parents):
        parents = tuple((p, fn) for p, fn in parents if p.requires_grad)
        v = Var(value, self, parents)
        self.nodes.append(v)
        return v

    def backward(self, loss):
        """Accumulate d loss / d node into ``.grad`` for every node that needs it."""
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        for v in self.nodes:
            v.grad = None
        loss.grad = np.ones_like(loss.value)
        for v in reversed(self.nodes):
            if v.grad is None or not v.parents:
                continue
            for p, fn in v.parents:
                g = fn(v.grad)
                p.grad = g if p.grad is None else p.grad + g


def _lift(x, tape):
    return x if isinstance(x, Var) else tape.const(x)


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one argument must be a Var")


def add(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.node(a.value + b.value, [
        (a, lambda g: unbroadcast(g, a.shape)),
        (b, lambda g: unbroadcast(g, b.shape)),
    ])


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.node(a.value - b.value, [
        (a, lambda g: unbroadcast(g, a.shape)),
        (b, lambda g: unbroadcast(-g, b.shape)),
    ])


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)
    return tape.node(a.value * b.value, [
        (a, lambda g: unbroadcast(g * b.value, a.shape)),
        (b, lambda g: unbroadcast(g * a.value, b.shape)),
    ])


def matmul(a, b):
    """(..., m, k) @ (k, n); ``b`` is a 2-D weight matrix."""
    tape = _tape_of(a, b)
    a, b = _lift(a, tape), _lift(b, tape)

    def grad_b(g):
        return a.value.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    return tape.node(a.value @ b.value, [(a, lambda g: g @ b.value.T), (b, grad_b)])


def exp(a):
    out = np.exp(a.value)
    return a.tape.node(out, [(a, lambda g: g * out)])


def log(a):
    return a.tape.node(np.log(a.value), [(a, lambda g: g / a.value)])


def sin(a):
    return a.tape.node(np.sin(a.value), [(a, lambda g: g * np.cos(a.value))])


def cos(a):
    return a.tape.node(np.cos(a.value), [(a, lambda g: -g * np.sin(a.value))])


def silu(a):
    s = 1.0 / (1.0 + np.exp(-a.value))
    return a.tape.node(a.value * s, [(a, lambda g: g * s * (1.0 + a.value * (1.0 - s)))])


def atan2(u, v):
    """atan2(u, v); the gradient at u = v = 0 is taken as zero."""
    tape = _tape_of(u, v)
    u, v = _lift(u, tape), _lift(v, tape)
    r2 = u.value**2 + v.value**2
    safe = np.where(r2 > 0, r2, 1.0)
    return tape.node(np.arctan2(u.value, v.value), [
        (u, lambda g: unbroadcast(np.where(r2 > 0, g * v.value / safe, 0.0), u.shape)),
        (v, lambda g: unbroadcast(np.where(r2 > 0, -g * u.value / safe, 0.0), v.shape)),
    ])


def wrap(a):
    """Map onto [-pi, pi); piecewise identity, so the gradient passes through."""
    out = np.mod(a.value + np.pi, 2 * np.pi) - np.pi
    out = np.where(out >= np.pi, out - 2 * np.pi, out)
    return a.tape.node(out, [(a, lambda g: g)])


def sum(a, axis=None, keepdims=False):
    def grad(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return a.tape.node(np.sum(a.value, axis=axis, keepdims=keepdims), [(a, grad)])


def mean(a, axis=None):
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def logsumexp(a, axis=-1):
    mx = np.max(a.value, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.exp(a.value - mx)
    s = e.sum(axis=axis, keepdims=True)
    out = np.squeeze(mx + np.log(s), axis)
    soft = e / s
    return a.tape.node(out, [(a, lambda g: np.expand_dims(g, axis) * soft)])


def log_softmax(a, axis=-1):
    lse = logsumexp(a, axis)
    return sub(a, reshape(lse, lse.shape[:axis % a.value.ndim] + (1,) + lse.shape[axis % a.value.ndim:]))


def reshape(a, shape):
    return a.tape.node(a.value.reshape(shape), [(a, lambda g: g.reshape(a.shape))])


def concat(xs, axis=-1):
    tape = _tape_of(*xs)
    xs = [_lift(x, tape) for x in xs]
    sizes = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def part(k):
        return lambda g: np.split(g, sizes, axis=axis)[k]

    return tape.node(np.concatenate([x.value for x in xs], axis=axis), [(x, part(k)) for k, x in enumerate(xs)])


def take_last(a, index):
    """``a[..., index[...]]`` gathered along the last axis."""
    idx = np.asarray(index)[..., None]
    out = np.take_along_axis(a.value, idx, axis=-1)[..., 0]

    def grad(g):
        full = np.zeros(a.shape)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        return full

    return a.tape.node(out, [(a, grad)])


def take_cols(a, start, stop):
    """``a[..., start:stop]``."""

    def grad(g):
        full = np.zeros(a.shape)
        full[..., start:stop] = g
        return full

    return a.tape.node(a.value[..., start:stop], [(a, grad)])
