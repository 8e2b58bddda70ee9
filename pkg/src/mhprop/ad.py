"""Minimal reverse-mode differentiation over numpy arrays.

A program is any callable ``program(P, inputs) -> scalar`` where ``P`` maps
parameter-view names to arrays. Called with plain arrays it is ordinary numpy
code; :func:`value_and_grad` calls it with tape :class:`Node` objects instead
and sweeps the tape backwards. Every primitive below accepts either kind.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN/inf while building the tape."""

    def __init__(self, primitive: str, views=()):
        self.primitive = primitive
        self.views = tuple(sorted(views))
        where = ", ".join(self.views) if self.views else "<no parameters>"
        super().__init__(f"non-finite output from primitive '{primitive}' (parameter views: {where})")


# --------------------------------------------------------------------------- params


@dataclass
class ParamVector:
    """Flat float64 parameter array with named, non-overlapping views."""

    values: np.ndarray
    layout: list  # [(name, offset, shape), ...]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        expected = 0
        for name, offset, shape in self.layout:
            if offset != expected:
                raise ValueError(f"view '{name}' starts at {offset}, expected {expected}")
            expected += int(np.prod(shape, dtype=np.int64))
        if expected != self.values.size:
            raise ValueError(f"views cover {expected} entries but vector has {self.values.size}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite values")

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ParamVector":
        layout, chunks, offset = [], [], 0
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            layout.append((name, offset, tuple(arr.shape)))
            chunks.append(arr.ravel())
            offset += arr.size
        values = np.concatenate(chunks) if chunks else np.zeros(0)
        return cls(values, layout)

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def names(self) -> list:
        return [name for name, _, _ in self.layout]

    def view(self, name: str) -> np.ndarray:
        for n, offset, shape in self.layout:
            if n == name:
                size = int(np.prod(shape, dtype=np.int64))
                return self.values[offset : offset + size].reshape(shape)
        raise KeyError(name)

    def view_of(self, index: int) -> str:
        """Name of the view containing flat position ``index``."""
        for name, offset, shape in self.layout:
            if offset <= index < offset + int(np.prod(shape, dtype=np.int64)):
                return name
        raise IndexError(index)

    def views(self) -> dict:
        return {name: self.view(name) for name in self.names}

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), list(self.layout))

    def copy(self) -> "ParamVector":
        return self.with_values(self.values)


@dataclass
class GradRecord:
    loss: float
    grad: np.ndarray


# --------------------------------------------------------------------------- tape


class Node:
    __slots__ = ("value", "parents", "op", "views", "grad")
    __array_ufunc__ = None  # make ndarray <op> Node dispatch to the Node's reflected operator

    def __init__(self, value, parents=(), op="leaf", views=frozenset()):
        self.value = value
        self.parents = parents
        self.op = op
        self.views = views
        self.grad = None

    @property
    def shape(self):
        return np.shape(self.value)

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
        return neg(self)

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.shape})"


def _val(x):
    return x.value if isinstance(x, Node) else x


def _is_node(*xs):
    return any(isinstance(x, Node) for x in xs)


def _record(op: str, value, parents):
    """Build a tape node; ``parents`` is a sequence of (input, vjp) pairs."""
    live = tuple((p, vjp) for p, vjp in parents if isinstance(p, Node))
    views = frozenset().union(*(p.views for p, _ in live)) if live else frozenset()
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(op, views)
    return Node(value, live, op, views)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# --------------------------------------------------------------------------- primitives


def add(a, b):
    out = _val(a) + _val(b)
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(_val(a)), np.shape(_val(b))
    return _record("add", out, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))])


def sub(a, b):
    out = _val(a) - _val(b)
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(_val(a)), np.shape(_val(b))
    return _record("sub", out, [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: -_unbroadcast(g, sb))])


def neg(a):
    if not _is_node(a):
        return -a
    return _record("neg", -a.value, [(a, lambda g: -g)])


def mul(a, b):
    """Elementwise (broadcasting) product."""
    va, vb = _val(a), _val(b)
    out = va * vb
    if not _is_node(a, b):
        return out
    sa, sb = np.shape(va), np.shape(vb)
    return _record(
        "mul", out, [(a, lambda g: _unbroadcast(g * vb, sa)), (b, lambda g: _unbroadcast(g * va, sb))]
    )


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (n, k)."""
    vx, vw, vb = _val(x), _val(w), _val(b)
    out = vx @ vw + vb
    if not _is_node(x, w, b):
        return out
    sb = np.shape(vb)
    return _record(
        "affine",
        out,
        [
            (x, lambda g: g @ vw.T),
            (w, lambda g: vx.T @ g),
            (b, lambda g: _unbroadcast(g, sb)),
        ],
    )


def tanh(x):
    out = np.tanh(_val(x))
    if not _is_node(x):
        return out
    return _record("tanh", out, [(x, lambda g: g * (1.0 - out * out))])


def leaky_relu(x, slope=0.2):
    vx = _val(x)
    out = np.where(vx > 0, vx, slope * vx)
    if not _is_node(x):
        return out
    return _record("leaky_relu", out, [(x, lambda g: g * np.where(vx > 0, 1.0, slope))])


def exp(x):
    with np.errstate(over="ignore"):
        out = np.exp(_val(x))
    if not _is_node(x):
        return out
    return _record("exp", out, [(x, lambda g: g * out)])


def log(x):
    vx = _val(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(vx)
    if not _is_node(x):
        return out
    return _record("log", out, [(x, lambda g: g / vx)])


def logistic(x):
    vx = _val(x)
    out = np.exp(-np.logaddexp(0.0, -vx))
    if not _is_node(x):
        return out
    return _record("logistic", out, [(x, lambda g: g * out * (1.0 - out))])


def sum(x, axis=None):  # noqa: A001 - mirrors numpy
    vx = _val(x)
    out = np.sum(vx, axis=axis)
    if not _is_node(x):
        return out
    shape = np.shape(vx)

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _record("sum", out, [(x, vjp)])


def mean(x, axis=None):
    n = np.size(_val(x)) if axis is None else np.shape(_val(x))[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def minimum0(x):
    """``min(x, 0)``; the subgradient at the kink x == 0 is taken as 0."""
    vx = _val(x)
    out = np.minimum(vx, 0.0)
    if not _is_node(x):
        return out
    return _record("minimum0", out, [(x, lambda g: g * (vx < 0))])


def clip(x, lo, hi):
    vx = _val(x)
    out = np.clip(vx, lo, hi)
    if not _is_node(x):
        return out
    return _record("clip", out, [(x, lambda g: g * ((vx > lo) & (vx < hi)))])


def cols(x, start, stop):
    """Column slice ``x[:, start:stop]``."""
    vx = _val(x)
    out = vx[:, start:stop]
    if not _is_node(x):
        return out
    shape = vx.shape

    def vjp(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return full

    return _record("cols", out, [(x, vjp)])


def concat_cols(a, b):
    va, vb = _val(a), _val(b)
    out = np.concatenate([va, vb], axis=1)
    if not _is_node(a, b):
        return out
    k = va.shape[1]
    return _record("concat_cols", out, [(a, lambda g: g[:, :k]), (b, lambda g: g[:, k:])])


def extern(x, fn: Callable, grad_fn: Callable, name: str = "extern"):
    """Per-row scalar function of a batch ``x`` (n, D) with a supplied gradient.

    ``fn(x) -> (n,)`` and ``grad_fn(x) -> (n, D)``. Used to splice analytic
    target log-densities into a tape.
    """
    vx = _val(x)
    out = np.asarray(fn(vx), dtype=np.float64)
    if not _is_node(x):
        return out
    return _record(name, out, [(x, lambda g: g[:, None] * grad_fn(vx))])


# --------------------------------------------------------------------------- drivers


def _backward(out: Node):
    order, seen, stack = [], set(), [(out, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    grads = {id(out): np.ones_like(np.asarray(out.value, dtype=np.float64))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            grads[key] = contrib if key not in grads else grads[key] + contrib


def evaluate(program, params: ParamVector, inputs=None) -> float:
    return float(program(params.views(), inputs))


def value_and_grad(program, params: ParamVector, inputs=None) -> GradRecord:
    """Loss value and exact reverse-mode gradient of ``program`` at ``params``."""
    leaves = {
        name: Node(params.view(name).copy(), op="param", views=frozenset([name])) for name in params.names
    }
    out = program(leaves, inputs)
    if not isinstance(out, Node):
        return GradRecord(float(out), np.zeros(params.size))
    if np.size(out.value) != 1:
        raise ValueError(f"program must return a scalar, got shape {np.shape(out.value)}")
    _backward(out)
    grad = np.zeros(params.size)
    for name, offset, shape in params.layout:
        g = leaves[name].grad
        if g is not None:
            grad[offset : offset + g.size] = np.asarray(g).ravel()
    if not np.all(np.isfinite(grad)):
        bad = [n for n, o, s in params.layout if not np.all(np.isfinite(grad[o : o + int(np.prod(s))]))]
        raise NonFiniteError("backward", bad)
    return GradRecord(float(out.value), grad)


def finite_diff_grad(program, params: ParamVector, inputs=None, step: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences ``(f(p + h e_i) - f(p - h e_i)) / 2h``.

    ``inputs`` is passed unchanged to every evaluation, so stochastic programs
    that take their noise from ``inputs`` see common random numbers.
    ``indices`` restricts the coordinates (others are left at zero).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = params.values
    grad = np.zeros(params.size)
    idx = range(params.size) if indices is None else indices
    for i in idx:
        hi = base.copy()
        hi[i] += step
        lo = base.copy()
        lo[i] -= step
        f_hi = evaluate(program, params.with_values(hi), inputs)
        f_lo = evaluate(program, params.with_values(lo), inputs)
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise NonFiniteError("finite_diff", [params.view_of(i)])
        grad[i] = (f_hi - f_lo) / (2.0 * step)
    return grad


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(params: ParamVector, grad: np.ndarray, state: AdamState, lr: float) -> ParamVector:
    """Bias-corrected Adam update. ``state`` is advanced in place."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != (params.size,) or state.m.shape != (params.size,):
        raise ValueError("gradient / optimizer state length does not match parameters")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("adam_step")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params.with_values(params.values - lr * m_hat / (np.sqrt(v_hat) + state.eps))
