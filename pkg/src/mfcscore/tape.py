"""Flat-tape reverse-mode differentiation over array-valued nodes.

A Recording is an append-only list of nodes.  Each node caches its primal
value (a numpy array, possibly batched) together with the operation kind and
the indices of its inputs, so creation order is already a topological order.
``backward`` seeds a scalar node with adjoint 1 and walks the list once in
reverse, accumulating adjoints into every node it passes; the adjoints of the
designated leaves are the gradient.

The primitive set is deliberately small: add, sub, mul, div, neg, dot, scale,
exp, log, square, sqrt, max0sq, sum, affine, plus registered composites
(network spatial derivatives, kernel density score) whose forward/backward
rules live next to the code that knows their closed forms.  Composites cache
whatever intermediates their backward rule needs on the node itself, so no
nested recording ever happens.

Elementwise binaries follow numpy broadcasting; the backward pass sums an
adjoint back down to each input's shape.  max0sq(u) = max(u, 0)^2 uses the
subgradient convention d2/du2 = 2*1{u > 0} with value 0 at the kink.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


class TapeError(ValueError):
    """Malformed recording request (bad arity, foreign expr, non-scalar seed)."""


class DomainError(TapeError):
    """Primal value outside the primitive's domain (log of 0, sqrt of negative)."""


@dataclass(frozen=True)
class ExprId:
    """Opaque handle into a recording."""

    index: int


class Expr:
    """Handle to one recorded node; supports arithmetic sugar.

    Arithmetic with plain floats records ``scale``/``neg`` nodes; arithmetic
    with arrays wraps them as constants first.  All sugar bottoms out in
    ``Tape.record``.
    """

    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _lift(self, other) -> "Expr":
        if isinstance(other, Expr):
            if other.tape is not self.tape:
                raise TapeError("expressions belong to different recordings")
            return other
        return self.tape.const(other)

    def __add__(self, other):
        return self.tape.record("add", [self, self._lift(other)])

    def __radd__(self, other):
        return self.tape.record("add", [self._lift(other), self])

    def __sub__(self, other):
        return self.tape.record("sub", [self, self._lift(other)])

    def __rsub__(self, other):
        return self.tape.record("sub", [self._lift(other), self])

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("scale", [self], aux=float(other))
        return self.tape.record("mul", [self, self._lift(other)])

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return self.tape.record("scale", [self], aux=1.0 / float(other))
        return self.tape.record("div", [self, self._lift(other)])

    def __rtruediv__(self, other):
        return self.tape.record("div", [self._lift(other), self])

    def __neg__(self):
        return self.tape.record("neg", [self])

    def __repr__(self):
        node = self.tape.nodes[self.index]
        return f"Expr#{self.index}<{node.kind}, shape={node.value.shape}>"


@dataclass
class Node:
    kind: str
    inputs: tuple[int, ...]
    value: np.ndarray
    aux: Any = None
    cache: Any = None


@dataclass
class Primitive:
    arity: int | None  # None = variadic
    forward: Callable  # (values, aux) -> value or (value, cache)
    backward: Callable  # (out_grad, values, value, cache, aux) -> list of grads


_REGISTRY: dict[str, Primitive] = {}


def register_primitive(kind: str, arity: int | None, forward: Callable, backward: Callable) -> None:
    """Install a primitive's forward/backward pair under a kind name.

    Composites (network derivatives, KDE score) call this at import time from
    the module that owns their closed forms.
    """

    _REGISTRY[kind] = Primitive(arity, forward, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum an adjoint down to the shape the input actually had."""

    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Gradients:
    """Adjoint-per-leaf view produced by ``Tape.backward``."""

    def __init__(self, tape: "Tape", table: dict[int, np.ndarray]):
        self._tape = tape
        self._table = table

    def wrt(self, expr: Expr) -> np.ndarray:
        """Gradient with respect to one leaf; zeros if the leaf was unused."""

        got = self._table.get(expr.index)
        if got is None:
            return np.zeros_like(self._tape.nodes[expr.index].value)
        return got


class Tape:
    """Append-only recording plus a single reverse sweep."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.leaves: set[int] = set()

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> Expr:
        self.nodes.append(node)
        return Expr(self, len(self.nodes) - 1)

    def leaf(self, value) -> Expr:
        """Parameter node: backward reports a gradient for it."""

        e = self._append(Node("leaf", (), np.asarray(value, dtype=float)))
        self.leaves.add(e.index)
        return e

    def const(self, value) -> Expr:
        """Data node: participates in forward values, never in gradients."""

        return self._append(Node("const", (), np.asarray(value, dtype=float)))

    def record(self, kind: str, inputs: list[Expr], aux=None) -> Expr:
        prim = _REGISTRY.get(kind)
        if prim is None:
            raise TapeError(f"unknown primitive kind {kind!r}")
        if prim.arity is not None and len(inputs) != prim.arity:
            raise TapeError(f"{kind} expects {prim.arity} inputs, got {len(inputs)}")
        for e in inputs:
            if not isinstance(e, Expr) or e.tape is not self:
                raise TapeError(f"{kind}: inputs must be expressions on this recording")
        values = [e.value for e in inputs]
        out = prim.forward(values, aux)
        cache = None
        if isinstance(out, tuple):
            out, cache = out
        return self._append(Node(kind, tuple(e.index for e in inputs), np.asarray(out), aux, cache))

    def backward(self, seed: Expr) -> Gradients:
        """Reverse sweep from a scalar seed; returns adjoints of the leaves.

        Deterministic: adjoints accumulate in reverse recording order, so two
        sweeps over the same recording produce bit-identical results.
        """

        if not isinstance(seed, Expr) or seed.tape is not self:
            raise TapeError("seed is not an expression on this recording")
        if seed.value.size != 1:
            raise TapeError(f"seed must be scalar-valued, got shape {seed.value.shape}")
        adjoint: list[np.ndarray | None] = [None] * len(self.nodes)
        adjoint[seed.index] = np.ones_like(seed.value)
        grads: dict[int, np.ndarray] = {}
        for idx in range(seed.index, -1, -1):
            g = adjoint[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            if node.kind in ("leaf", "const"):
                if idx in self.leaves:
                    grads[idx] = g
                continue
            prim = _REGISTRY[node.kind]
            values = [self.nodes[i].value for i in node.inputs]
            in_grads = prim.backward(g, values, node.value, node.cache, node.aux)
            for i, ig in zip(node.inputs, in_grads):
                if ig is None:
                    continue
                ig = _unbroadcast(np.asarray(ig), self.nodes[i].value.shape)
                if adjoint[i] is None:
                    adjoint[i] = ig
                else:
                    adjoint[i] = adjoint[i] + ig
        return Gradients(self, grads)


# ---------------------------------------------------------------------------
# Core primitive rules.


def _fw_add(v, aux):
    return v[0] + v[1]


def _bw_add(g, v, out, cache, aux):
    return [g, g]


def _fw_sub(v, aux):
    return v[0] - v[1]


def _bw_sub(g, v, out, cache, aux):
    return [g, -g]


def _fw_mul(v, aux):
    return v[0] * v[1]


def _bw_mul(g, v, out, cache, aux):
    return [g * v[1], g * v[0]]


def _fw_div(v, aux):
    return v[0] / v[1]


def _bw_div(g, v, out, cache, aux):
    return [g / v[1], -g * v[0] / (v[1] * v[1])]


def _fw_neg(v, aux):
    return -v[0]


def _bw_neg(g, v, out, cache, aux):
    return [-g]


def _fw_scale(v, aux):
    return v[0] * aux


def _bw_scale(g, v, out, cache, aux):
    return [g * aux]


def _fw_dot(v, aux):
    a, b = np.broadcast_arrays(v[0], v[1])
    return (a * b).sum(axis=-1)


def _bw_dot(g, v, out, cache, aux):
    return [g[..., None] * v[1], g[..., None] * v[0]]


def _fw_exp(v, aux):
    return np.exp(v[0])


def _bw_exp(g, v, out, cache, aux):
    return [g * out]


def _fw_log(v, aux):
    if np.any(v[0] <= 0.0):
        raise DomainError("log: inputs must be strictly positive")
    return np.log(v[0])


def _bw_log(g, v, out, cache, aux):
    return [g / v[0]]


def _fw_square(v, aux):
    return v[0] * v[0]


def _bw_square(g, v, out, cache, aux):
    return [2.0 * g * v[0]]


def _fw_sqrt(v, aux):
    if np.any(v[0] < 0.0):
        raise DomainError("sqrt: inputs must be nonnegative")
    return np.sqrt(v[0])


def _bw_sqrt(g, v, out, cache, aux):
    return [g * 0.5 / out]


def _fw_max0sq(v, aux):
    r = np.maximum(v[0], 0.0)
    return r * r


def _bw_max0sq(g, v, out, cache, aux):
    return [g * 2.0 * np.maximum(v[0], 0.0)]


def _fw_sum(v, aux):
    return np.sum(v[0], axis=aux)


def _bw_sum(g, v, out, cache, aux):
    x = v[0]
    if aux is None:
        return [np.broadcast_to(g, x.shape).copy()]
    g = np.expand_dims(g, aux)
    return [np.broadcast_to(g, x.shape).copy()]


def _fw_affine(v, aux):
    w, b, x = v
    return x @ w.T + b


def _bw_affine(g, v, out, cache, aux):
    w, b, x = v
    if x.ndim == 1:
        return [np.outer(g, x), g, g @ w]
    flat_g = g.reshape(-1, g.shape[-1])
    flat_x = x.reshape(-1, x.shape[-1])
    return [flat_g.T @ flat_x, flat_g.sum(axis=0), g @ w]


def _fw_time_concat(v, aux):
    x = v[0]
    col = np.full(x.shape[:-1] + (1,), float(aux))
    return np.concatenate([col, x], axis=-1)


def _bw_time_concat(g, v, out, cache, aux):
    return [g[..., 1:]]


register_primitive("add", 2, _fw_add, _bw_add)
register_primitive("sub", 2, _fw_sub, _bw_sub)
register_primitive("mul", 2, _fw_mul, _bw_mul)
register_primitive("div", 2, _fw_div, _bw_div)
register_primitive("neg", 1, _fw_neg, _bw_neg)
register_primitive("scale", 1, _fw_scale, _bw_scale)
register_primitive("dot", 2, _fw_dot, _bw_dot)
register_primitive("exp", 1, _fw_exp, _bw_exp)
register_primitive("log", 1, _fw_log, _bw_log)
register_primitive("square", 1, _fw_square, _bw_square)
register_primitive("sqrt", 1, _fw_sqrt, _bw_sqrt)
register_primitive("max0sq", 1, _fw_max0sq, _bw_max0sq)
register_primitive("sum", 1, _fw_sum, _bw_sum)
register_primitive("affine", 3, _fw_affine, _bw_affine)
register_primitive("time_concat", 1, _fw_time_concat, _bw_time_concat)


# ---------------------------------------------------------------------------
# Dispatching helpers: the same numerical code can run on plain arrays or on
# expressions, so rollouts, problem handles and losses are written once.


def is_expr(x) -> bool:
    return isinstance(x, Expr)


def _any_tape(*args) -> "Tape | None":
    for a in args:
        if isinstance(a, Expr):
            return a.tape
    return None


def _on(tape: Tape, x) -> Expr:
    return x if isinstance(x, Expr) else tape.const(x)


def dot(a, b):
    """Contraction over the trailing axis: (..., d) x (..., d) -> (...)."""

    tape = _any_tape(a, b)
    if tape is None:
        aa, bb = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
        return (aa * bb).sum(axis=-1)
    return tape.record("dot", [_on(tape, a), _on(tape, b)])


def asum(a, axis=None):
    tape = _any_tape(a)
    if tape is None:
        return np.sum(np.asarray(a, dtype=float), axis=axis)
    return tape.record("sum", [a], aux=axis)


def exp(a):
    tape = _any_tape(a)
    if tape is None:
        return np.exp(np.asarray(a, dtype=float))
    return tape.record("exp", [a])


def log(a):
    tape = _any_tape(a)
    if tape is None:
        return np.log(np.asarray(a, dtype=float))
    return tape.record("log", [a])


def square(a):
    tape = _any_tape(a)
    if tape is None:
        a = np.asarray(a, dtype=float)
        return a * a
    return tape.record("square", [a])


def sqrt(a):
    tape = _any_tape(a)
    if tape is None:
        return np.sqrt(np.asarray(a, dtype=float))
    return tape.record("sqrt", [a])


def max0sq(a):
    tape = _any_tape(a)
    if tape is None:
        r = np.maximum(np.asarray(a, dtype=float), 0.0)
        return r * r
    return tape.record("max0sq", [a])


def scale(a, c: float):
    tape = _any_tape(a)
    if tape is None:
        return np.asarray(a, dtype=float) * float(c)
    return tape.record("scale", [a], aux=float(c))


def affine(w, b, x):
    """w @ x + b with x batched over leading axes: (..., in) -> (..., out)."""

    tape = _any_tape(w, b, x)
    if tape is None:
        return np.asarray(x, dtype=float) @ np.asarray(w, dtype=float).T + np.asarray(b, dtype=float)
    return tape.record("affine", [_on(tape, w), _on(tape, b), _on(tape, x)])


def time_concat(x, t: float):
    """Prepend a constant time column: (..., d) -> (..., d+1)."""

    tape = _any_tape(x)
    if tape is None:
        x = np.asarray(x, dtype=float)
        col = np.full(x.shape[:-1] + (1,), float(t))
        return np.concatenate([col, x], axis=-1)
    return tape.record("time_concat", [x], aux=float(t))


def value_of(x) -> np.ndarray:
    """Primal value of an expression, or the array itself."""

    return x.value if isinstance(x, Expr) else np.asarray(x, dtype=float)
