"""Gaussian kernel density estimate, its score, and their tape adjoints.

For a cloud of samples s_1..s_n and bandwidth sigma, the estimate at x is

  rho(x)  = (1/n) sum_i (2 pi sigma^2)^(-d/2) exp(-|x - s_i|^2 / (2 sigma^2))
  score(x) = grad_x log rho(x) = -(1/sigma^2) sum_i w_i(x) (x - s_i)

where w_i(x) are softmax weights of -|x - s_i|^2 / (2 sigma^2), evaluated with
max subtraction so exponents as large as |x - s_i|^2/sigma^2 ~ 1e4 cannot
overflow.  A point evaluating at its own cloud position keeps its self term.

Both score and log density are registered as composite tape primitives with
two inputs (cloud, points); the backward rules push cotangents into the
evaluation points and into every cloud sample, so the density cloud built
from the current particle batch is differentiated through by default.  A
detach flag records the same value as a constant (no adjoints), which leaves
loss values unchanged and only alters gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp


@dataclass
class KdeCloud:
    """Sample set plus bandwidth; samples may be an array or an expression."""

    samples: object  # (n, d) array or Expr
    bandwidth: float

    def __post_init__(self):
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")


def _weights(cloud: np.ndarray, x: np.ndarray, sigma: float):
    """Softmax weights and log density, stabilized by max subtraction."""

    d = cloud.shape[1]
    sq = (x * x).sum(axis=1)[:, None] + (cloud * cloud).sum(axis=1)[None, :]
    sq -= 2.0 * (x @ cloud.T)
    np.maximum(sq, 0.0, out=sq)
    e = sq / (-2.0 * sigma * sigma)
    m = e.max(axis=1, keepdims=True)
    w = np.exp(e - m)
    total = w.sum(axis=1, keepdims=True)
    w /= total
    log_rho = (
        m[:, 0]
        + np.log(total[:, 0])
        - np.log(cloud.shape[0])
        - 0.5 * d * np.log(2.0 * np.pi * sigma * sigma)
    )
    return w, log_rho


def _score_from_weights(cloud, x, w, sigma):
    return (w @ cloud - x) / (sigma * sigma)


_CHUNK = 2048


def log_density(cloud: KdeCloud, x: np.ndarray) -> np.ndarray:
    """log rho(x) for plain arrays, chunked over evaluation points."""

    s = np.asarray(tp.value_of(cloud.samples))
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[0])
    for lo in range(0, x.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, x.shape[0])
        _, out[lo:hi] = _weights(s, x[lo:hi], cloud.bandwidth)
    return out


def density(cloud: KdeCloud, x: np.ndarray) -> np.ndarray:
    return np.exp(log_density(cloud, x))


def score(cloud: KdeCloud, x: np.ndarray) -> np.ndarray:
    """grad_x log rho(x) for plain arrays, chunked over evaluation points."""

    s = np.asarray(tp.value_of(cloud.samples))
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for lo in range(0, x.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, x.shape[0])
        w, _ = _weights(s, x[lo:hi], cloud.bandwidth)
        out[lo:hi] = _score_from_weights(s, x[lo:hi], w, cloud.bandwidth)
    return out


# ---------------------------------------------------------------------------
# Composite primitives.  Inputs are (cloud, points); aux is (sigma, detach).


def _fw_kde_score(values, aux):
    s, x = values
    sigma, _ = aux
    w, _ = _weights(s, x, sigma)
    return _score_from_weights(s, x, w, sigma), w


def _bw_kde_score(g, values, out, cache, aux):
    s, x = values
    sigma, detach = aux
    if detach:
        return [None, None]
    w = cache
    s2 = sigma * sigma
    # c[e,i] = gbar_e . s_i couples the softmax derivative to the cotangent.
    c = g @ s.T
    q = (w * c).sum(axis=1)
    p = (w * c) @ s
    d_x = -g / s2 - ((q[:, None] * x - p) / s2 + q[:, None] * out) / s2
    m = w * (c - q[:, None])
    d_s = (w.T @ g + (m.T @ x - s * m.sum(axis=0)[:, None]) / s2) / s2
    return [d_s, d_x]


def _fw_kde_log_density(values, aux):
    s, x = values
    sigma, _ = aux
    w, log_rho = _weights(s, x, sigma)
    return log_rho, w


def _bw_kde_log_density(g, values, out, cache, aux):
    s, x = values
    sigma, detach = aux
    if detach:
        return [None, None]
    w = cache
    s2 = sigma * sigma
    sc = _score_from_weights(s, x, w, sigma)
    d_x = g[:, None] * sc
    gw = g[:, None] * w
    d_s = (gw.T @ x - s * gw.sum(axis=0)[:, None]) / s2
    return [d_s, d_x]


tp.register_primitive("kde_score", 2, _fw_kde_score, _bw_kde_score)
tp.register_primitive("kde_log_density", 2, _fw_kde_log_density, _bw_kde_log_density)


# ---------------------------------------------------------------------------
# Dispatchers used by rollouts: cloud and points may live on a recording.


def score_at(cloud: KdeCloud, x, detach: bool = False):
    rec = tp._any_tape(cloud.samples, x)
    if rec is None:
        return score(cloud, np.asarray(x, dtype=float))
    return rec.record(
        "kde_score",
        [tp._on(rec, cloud.samples), tp._on(rec, x)],
        aux=(float(cloud.bandwidth), bool(detach)),
    )


def log_density_at(cloud: KdeCloud, x):
    rec = tp._any_tape(cloud.samples, x)
    if rec is None:
        return log_density(cloud, np.asarray(x, dtype=float))
    return rec.record(
        "kde_log_density",
        [tp._on(rec, cloud.samples), tp._on(rec, x)],
        aux=(float(cloud.bandwidth), False),
    )


def density_at(cloud: KdeCloud, x):
    return tp.exp(log_density_at(cloud, x))
