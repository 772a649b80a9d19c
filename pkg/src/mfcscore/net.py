"""Two-hidden-layer value network and its spatial derivatives.

The raw network is N(t, x) = w3 . act(w2 . act(w1 . [t; x] + b1) + b2) + b3
with act(u) = max(u, 0)^2, width 30 by default, and the time input fed in
unscaled.  Terminal data enters through a wrapper:

  hard:  phi(t, x) = ((T - t)/T) * N(t, x) - (t/T) * V(x)
  soft:  phi(t, x) = N(t, x)            (terminal data handled by a penalty)

so in hard mode phi(T, x) = -V(x) holds to machine precision for any
parameters.

Value evaluation is recorded through ordinary tape primitives.  The spatial
gradient and Laplacian are single composite tape nodes whose closed forms and
adjoints are derived here once, by hand, for this fixed architecture:

  act'(u) = 2 max(u, 0)        act''(u) = 2 * 1{u > 0}   (0 at the kink)

With A = w1[:, 1:] (the x columns), g1 = act'(a1), g2 = act'(a2),
B = w2^T (w3 * g2) and C = w2 diag(g1) A:

  grad_x N = A^T (g1 * B)
  hess_x N = C^T diag(w3 * act''(a2)) C + A^T diag(act''(a1) * B) A
  lap_x  N = sum_p (w3 * act''(a2))_p |C_p|^2 + sum_q (act''(a1) * B)_q |A_q|^2

The backward rules below push cotangents of grad_x N and lap_x N into the
parameters and into x (the x-adjoint of the gradient is a Hessian-vector
product; the x-adjoint of the Laplacian is its spatial gradient, which is
well defined almost everywhere because act''' vanishes away from the kink).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import tape as tp


@dataclass(frozen=True)
class NetConfig:
    dim: int
    width: int = 30


@dataclass
class NetParams:
    w1: np.ndarray  # (width, dim + 1)
    b1: np.ndarray  # (width,)
    w2: np.ndarray  # (width, width)
    b2: np.ndarray  # (width,)
    w3: np.ndarray  # (width,)
    b3: np.ndarray  # ()

    @property
    def width(self) -> int:
        return self.w1.shape[0]

    @property
    def dim(self) -> int:
        return self.w1.shape[1] - 1

    def as_list(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    @staticmethod
    def from_list(arrays: list[np.ndarray]) -> "NetParams":
        return NetParams(*arrays)


class ParamExprs(NamedTuple):
    """The same six parameters, lifted to leaves of one recording."""

    w1: tp.Expr
    b1: tp.Expr
    w2: tp.Expr
    b2: tp.Expr
    w3: tp.Expr
    b3: tp.Expr


@dataclass
class TerminalWrapper:
    """How terminal data is imposed on the raw network.

    mode "hard" blends the raw net with the terminal cost V so that
    phi(T, .) = -V exactly; it requires V together with its spatial gradient
    and Laplacian (each a callable of x that also works on recorded
    expressions).  mode "soft" leaves the net untouched.
    """

    mode: str
    horizon: float
    terminal_cost: Callable | None = None
    terminal_cost_grad: Callable | None = None
    terminal_cost_lap: Callable | None = None

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown terminal mode {self.mode!r}")
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.mode == "hard" and (
            self.terminal_cost is None
            or self.terminal_cost_grad is None
            or self.terminal_cost_lap is None
        ):
            raise ValueError("hard terminal mode requires V and its derivatives")


def init_params(config: NetConfig, seed: int) -> NetParams:
    """Fan-in uniform initialization: entries in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    The bound is deliberately small.  Squared-ReLU layers grow quartically in
    |x|, and the rollout feeds grad phi back into the particle drift, so a hot
    start (e.g. the sqrt(6/fan_in) bound) produces initial velocities in the
    hundreds that eject the batch past the activation tail within a few Euler
    steps.  At 1/sqrt(fan_in) the initial field stays O(1) on the sampling
    region and the dynamics remain integrable from step zero.
    """

    rng = np.random.default_rng(seed)
    d, m = config.dim, config.width

    def draw(shape, fan_in):
        lim = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-lim, lim, size=shape)

    return NetParams(
        w1=draw((m, d + 1), d + 1),
        b1=draw((m,), d + 1),
        w2=draw((m, m), m),
        b2=draw((m,), m),
        w3=draw((m,), m),
        b3=draw((), m),
    )


def params_to_exprs(rec: tp.Tape, params: NetParams) -> ParamExprs:
    return ParamExprs(*(rec.leaf(a) for a in params.as_list()))


def params_to_jsonable(params: NetParams) -> dict:
    return {
        "dim": params.dim,
        "width": params.width,
        "w1": params.w1.tolist(),
        "b1": params.b1.tolist(),
        "w2": params.w2.tolist(),
        "b2": params.b2.tolist(),
        "w3": params.w3.tolist(),
        "b3": float(params.b3),
    }


def params_from_jsonable(obj: dict) -> NetParams:
    return NetParams(
        w1=np.asarray(obj["w1"], dtype=float),
        b1=np.asarray(obj["b1"], dtype=float),
        w2=np.asarray(obj["w2"], dtype=float),
        b2=np.asarray(obj["b2"], dtype=float),
        w3=np.asarray(obj["w3"], dtype=float),
        b3=np.asarray(obj["b3"], dtype=float),
    )


def save_params(path, params: NetParams) -> None:
    with open(path, "w") as fh:
        json.dump(params_to_jsonable(params), fh)


def load_params(path) -> NetParams:
    with open(path) as fh:
        return params_from_jsonable(json.load(fh))


# ---------------------------------------------------------------------------
# Closed forms (plain numpy, batched over rows of x).


def _layer_cache(w1, b1, w2, b2, w3, t, x):
    n = x.shape[0]
    u = np.concatenate([np.full((n, 1), float(t)), x], axis=1)
    a1 = u @ w1.T + b1
    r1 = np.maximum(a1, 0.0)
    s1 = r1 * r1
    g1 = 2.0 * r1
    k1 = 2.0 * (a1 > 0.0)
    a2 = s1 @ w2.T + b2
    r2 = np.maximum(a2, 0.0)
    s2 = r2 * r2
    g2 = 2.0 * r2
    k2 = 2.0 * (a2 > 0.0)
    return u, s1, g1, k1, s2, g2, k2


def _raw_value_np(params: NetParams, t: float, x: np.ndarray) -> np.ndarray:
    _, _, _, _, s2, _, _ = _layer_cache(
        params.w1, params.b1, params.w2, params.b2, params.w3, t, x
    )
    return s2 @ params.w3 + params.b3


def _fw_spatial_grad(values, aux):
    w1, b1, w2, b2, w3, x = values
    t = aux
    u, s1, g1, k1, _, g2, k2 = _layer_cache(w1, b1, w2, b2, w3, t, x)
    A = w1[:, 1:]
    B = (w3 * g2) @ w2
    z = (g1 * B) @ A
    return z, (u, s1, g1, k1, g2, k2, B)


def _bw_spatial_grad(g, values, out, cache, aux):
    w1, b1, w2, b2, w3, x = values
    u, s1, g1, k1, g2, k2, B = cache
    A = w1[:, 1:]
    zbar = g

    # Parameter adjoints: backprop through the directional derivative
    # psi = w3 . (g2 * (w2 (g1 * (A zbar)))), summed over the batch.
    alpha1 = zbar @ A.T
    t1 = g1 * alpha1
    beta2 = t1 @ w2.T
    d_w3 = (g2 * beta2).sum(axis=0)
    d_beta2 = w3 * g2
    d_a2 = k2 * (w3 * beta2)
    d_w2 = d_beta2.T @ t1 + d_a2.T @ s1
    d_b2 = d_a2.sum(axis=0)
    d_t1 = d_beta2 @ w2
    d_s1 = d_a2 @ w2
    d_a1 = k1 * (alpha1 * d_t1) + g1 * d_s1
    d_A = (g1 * d_t1).T @ zbar
    d_w1 = d_a1.T @ u
    d_w1[:, 1:] += d_A
    d_b1 = d_a1.sum(axis=0)

    # x adjoint: Hessian-vector product.
    C = (w2 * g1[:, None, :]) @ A
    Cz = np.einsum("npk,nk->np", C, zbar)
    d_x = np.einsum("npk,np->nk", C, (w3 * k2) * Cz) + ((k1 * B) * alpha1) @ A
    return [d_w1, d_b1, d_w2, d_b2, d_w3, d_x]


def _fw_spatial_lap(values, aux):
    w1, b1, w2, b2, w3, x = values
    t = aux
    u, s1, g1, k1, _, g2, k2 = _layer_cache(w1, b1, w2, b2, w3, t, x)
    A = w1[:, 1:]
    B = (w3 * g2) @ w2
    C = (w2 * g1[:, None, :]) @ A
    rowsq_C = (C * C).sum(axis=-1)
    rowsq_A = (A * A).sum(axis=-1)
    lap = ((w3 * k2) * rowsq_C).sum(axis=-1) + ((k1 * B) * rowsq_A).sum(axis=-1)
    return lap, (u, s1, g1, k1, g2, k2, B, C, rowsq_C, rowsq_A)


def _bw_spatial_lap(g, values, out, cache, aux):
    w1, b1, w2, b2, w3, x = values
    u, s1, g1, k1, g2, k2, B, C, rowsq_C, rowsq_A = cache
    A = w1[:, 1:]
    hb = g[:, None]

    v1 = k1 * rowsq_A
    Wv1 = v1 @ w2.T
    D = np.matmul(w2.T, (w3 * k2)[:, :, None] * C)
    rdDA = (D * A[None, :, :]).sum(axis=-1)

    d_w3 = (hb * (k2 * rowsq_C + g2 * Wv1)).sum(axis=0)
    CA = np.matmul(C, A.T)
    d_w2 = 2.0 * np.einsum("np,npq,nq->pq", hb * (w3 * k2), CA, g1, optimize=True)
    d_w2 += (hb * (w3 * g2)).T @ v1
    d_a2 = hb * (k2 * (w3 * Wv1))
    d_w2 += d_a2.T @ s1
    d_b2 = d_a2.sum(axis=0)
    d_s1 = d_a2 @ w2
    d_a1 = hb * (k1 * (2.0 * rdDA)) + g1 * d_s1
    d_A = 2.0 * np.einsum("nq,nqk->qk", hb * g1, D)
    d_A += 2.0 * ((hb * (B * k1)).sum(axis=0))[:, None] * A
    d_w1 = d_a1.T @ u
    d_w1[:, 1:] += d_A
    d_b1 = d_a1.sum(axis=0)

    # x adjoint: gradient of the Laplacian (third spatial derivative, valid
    # almost everywhere since act''' = 0 away from the kink).
    d_x = hb * (2.0 * ((k1 * rdDA) @ A) + np.einsum("nq,nqk->nk", v1, D))
    return [d_w1, d_b1, d_w2, d_b2, d_w3, d_x]


tp.register_primitive("phi_spatial_grad", 6, _fw_spatial_grad, _bw_spatial_grad)
tp.register_primitive("phi_spatial_laplacian", 6, _fw_spatial_lap, _bw_spatial_lap)


# ---------------------------------------------------------------------------
# Public evaluation: works on arrays and on recorded expressions alike.


def _is_recorded(params, x) -> bool:
    return isinstance(params, ParamExprs) or tp.is_expr(x)


def _blend(wrapper: TerminalWrapper, t: float, raw, terminal_part):
    T = wrapper.horizon
    wt = (T - t) / T
    vt = t / T
    return tp.scale(raw, wt) - tp.scale(terminal_part, vt)


def raw_eval(params, t: float, x):
    """The unwrapped network value N(t, x), batched: (n, d) -> (n,)."""

    u = tp.time_concat(x, t)
    h1 = tp.max0sq(tp.affine(params.w1, params.b1, u))
    h2 = tp.max0sq(tp.affine(params.w2, params.b2, h1))
    return tp.dot(h2, params.w3) + params.b3


def phi_eval(params, wrapper: TerminalWrapper, t: float, x):
    """Wrapped value phi(t, x); (n, d) -> (n,)."""

    raw = raw_eval(params, t, x)
    if wrapper.mode == "soft":
        return raw
    return _blend(wrapper, t, raw, wrapper.terminal_cost(x))


def phi_spatial_grad(params, wrapper: TerminalWrapper, t: float, x):
    """grad_x phi(t, x); (n, d) -> (n, d)."""

    if _is_recorded(params, x):
        rec = x.tape if tp.is_expr(x) else params.w1.tape
        x = x if tp.is_expr(x) else rec.const(x)
        z = rec.record(
            "phi_spatial_grad",
            [params.w1, params.b1, params.w2, params.b2, params.w3, x],
            aux=float(t),
        )
    else:
        z, _ = _fw_spatial_grad(
            [params.w1, params.b1, params.w2, params.b2, params.w3, np.asarray(x, dtype=float)],
            float(t),
        )
    if wrapper.mode == "soft":
        return z
    return _blend(wrapper, t, z, wrapper.terminal_cost_grad(x))


def phi_spatial_laplacian(params, wrapper: TerminalWrapper, t: float, x):
    """lap_x phi(t, x); (n, d) -> (n,)."""

    if _is_recorded(params, x):
        rec = x.tape if tp.is_expr(x) else params.w1.tape
        x = x if tp.is_expr(x) else rec.const(x)
        h = rec.record(
            "phi_spatial_laplacian",
            [params.w1, params.b1, params.w2, params.b2, params.w3, x],
            aux=float(t),
        )
    else:
        h, _ = _fw_spatial_lap(
            [params.w1, params.b1, params.w2, params.b2, params.w3, np.asarray(x, dtype=float)],
            float(t),
        )
    if wrapper.mode == "soft":
        return h
    return _blend(wrapper, t, h, wrapper.terminal_cost_lap(x))
