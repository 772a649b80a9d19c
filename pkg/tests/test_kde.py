"""Kernel density estimate: values, score, normalization, and tape adjoints."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mfcscore import kde, tape as tp
from mfcscore.kde import KdeCloud


def test_single_point_cloud_is_one_gaussian():
    sigma = 0.7
    cloud = KdeCloud(np.array([[0.5, -0.25]]), sigma)
    x = np.array([[0.5, -0.25], [1.5, 0.75]])
    got = kde.density(cloud, x)
    diff = x - np.array([0.5, -0.25])
    want = np.exp(-(diff * diff).sum(axis=1) / (2 * sigma**2)) / (2 * np.pi * sigma**2)
    assert np.allclose(got, want, rtol=1e-12)
    # score of a single Gaussian is exactly -(x - s)/sigma^2
    assert np.allclose(kde.score(cloud, x), -diff / sigma**2, rtol=1e-12)


def test_density_integrates_to_one():
    rng = np.random.default_rng(5)
    cloud = KdeCloud(rng.normal(size=(40, 1)), 0.35)
    grid = np.linspace(-12.0, 12.0, 4001)[:, None]
    mass = np.trapezoid(kde.density(cloud, grid), grid[:, 0])
    assert abs(mass - 1.0) < 1e-8


def test_density_second_moment_is_cloud_moment_plus_bandwidth_sq():
    # mixture-of-Gaussians identity: Var = Var_0(samples) + sigma^2
    rng = np.random.default_rng(6)
    samples = rng.normal(size=(25, 1))
    sigma = 0.4
    cloud = KdeCloud(samples, sigma)
    grid = np.linspace(-14.0, 14.0, 6001)[:, None]
    dens = kde.density(cloud, grid)
    mean = np.trapezoid(grid[:, 0] * dens, grid[:, 0])
    second = np.trapezoid(grid[:, 0] ** 2 * dens, grid[:, 0])
    assert abs(mean - samples.mean()) < 1e-8
    assert abs((second - mean**2) - (samples.var() + sigma**2)) < 1e-8


def test_self_term_kept_when_evaluating_at_a_sample():
    a, sigma = 0.5, 0.5
    cloud = KdeCloud(np.array([[-a], [a]]), sigma)
    w1 = math.exp(-2 * a * a / sigma**2) / (1.0 + math.exp(-2 * a * a / sigma**2))
    want = -2.0 * a * w1 / sigma**2
    got = kde.score(cloud, np.array([[a]]))
    assert np.allclose(got, [[want]], rtol=1e-12)


def test_score_matches_log_density_finite_differences():
    rng = np.random.default_rng(7)
    cloud = KdeCloud(rng.normal(size=(30, 2)), 0.45)
    x = rng.uniform(-1.5, 1.5, size=(6, 2))
    got = kde.score(cloud, x)
    h = 1e-6
    for k in range(2):
        bump = np.zeros_like(x)
        bump[:, k] = h
        fd = (kde.log_density(cloud, x + bump) - kde.log_density(cloud, x - bump)) / (2 * h)
        assert np.allclose(got[:, k], fd, rtol=2e-5, atol=1e-9)


def test_translation_equivariance():
    rng = np.random.default_rng(8)
    samples = rng.normal(size=(20, 3))
    x = rng.normal(size=(5, 3))
    shift = np.array([10.0, -3.0, 0.5])
    a = kde.score(KdeCloud(samples, 0.3), x)
    b = kde.score(KdeCloud(samples + shift, 0.3), x + shift)
    assert np.allclose(a, b, atol=1e-12)


def test_large_cloud_score_approaches_smoothed_gaussian():
    # cloud ~ N(0,1) smoothed by sigma: scores approach -x/(1+sigma^2) in the bulk
    rng = np.random.default_rng(9)
    sigma = 0.3
    cloud = KdeCloud(rng.normal(size=(4000, 1)), sigma)
    x = np.linspace(-1.5, 1.5, 21)[:, None]
    got = kde.score(cloud, x)
    want = -x / (1.0 + sigma**2)
    err = np.sqrt(((got - want) ** 2).sum() / (want**2).sum())
    assert err < 0.1


def test_far_points_do_not_overflow():
    cloud = KdeCloud(np.array([[0.0], [0.2]]), 0.1)
    x = np.array([[1000.0]])
    with np.errstate(over="raise"):
        ld = kde.log_density(cloud, x)
        sc = kde.score(cloud, x)
    assert np.isfinite(ld).all() and ld[0] < -1e6
    assert np.isfinite(sc).all()
    # the weight collapses onto the nearest sample
    assert np.allclose(sc, -(1000.0 - 0.2) / 0.01, rtol=1e-9)


def test_bandwidth_must_be_positive():
    with pytest.raises(ValueError):
        KdeCloud(np.zeros((3, 1)), 0.0)


def test_recorded_values_match_plain_values():
    rng = np.random.default_rng(10)
    samples = rng.normal(size=(15, 2))
    x = rng.normal(size=(4, 2))
    cloud = KdeCloud(samples, 0.5)
    rec = tp.Tape()
    rcloud = KdeCloud(rec.leaf(samples), 0.5)
    ex = rec.leaf(x)
    assert np.allclose(tp.value_of(kde.score_at(rcloud, ex)), kde.score(cloud, x), atol=1e-15)
    assert np.allclose(
        tp.value_of(kde.log_density_at(rcloud, ex)), kde.log_density(cloud, x), atol=1e-15
    )


def fd_grad(loss, arr, h=1e-6):
    g = np.zeros_like(arr)
    flat, gflat = arr.ravel(), g.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss()
        flat[i] = keep - h
        dn = loss()
        flat[i] = keep
        gflat[i] = (up - dn) / (2 * h)
    return g


@pytest.mark.parametrize("kind", ["score", "log_density"])
def test_composite_adjoints_match_finite_differences(kind):
    rng = np.random.default_rng(11)
    samples = rng.normal(size=(8, 2))
    x = rng.uniform(-1.0, 1.0, size=(5, 2))
    wgt = rng.normal(size=(5, 2))

    def build():
        rec = tp.Tape()
        es = rec.leaf(samples)
        ex = rec.leaf(x)
        cloud = KdeCloud(es, 0.6)
        if kind == "score":
            loss = tp.asum(kde.score_at(cloud, ex) * rec.const(wgt))
        else:
            loss = tp.asum(kde.log_density_at(cloud, ex) * rec.const(wgt[:, 0]))
        return rec, es, ex, loss

    rec, es, ex, loss = build()
    grads = rec.backward(loss)
    fd_s = fd_grad(lambda: build()[3].value, samples)
    fd_x = fd_grad(lambda: build()[3].value, x)
    assert np.allclose(grads.wrt(es), fd_s, rtol=2e-5, atol=1e-9), kind
    assert np.allclose(grads.wrt(ex), fd_x, rtol=2e-5, atol=1e-9), kind


def test_detach_zeroes_adjoints_but_keeps_value():
    rng = np.random.default_rng(12)
    samples = rng.normal(size=(6, 1))
    x = rng.normal(size=(3, 1))

    def run(detach):
        rec = tp.Tape()
        es = rec.leaf(samples)
        ex = rec.leaf(x)
        out = kde.score_at(KdeCloud(es, 0.4), ex, detach=detach)
        loss = tp.asum(tp.square(out))
        grads = rec.backward(loss)
        return loss.value, grads.wrt(es), grads.wrt(ex)

    v0, gs0, gx0 = run(False)
    v1, gs1, gx1 = run(True)
    assert np.array_equal(v0, v1)
    assert np.any(gs0 != 0.0) and np.any(gx0 != 0.0)
    assert np.array_equal(gs1, np.zeros_like(samples))
    assert np.array_equal(gx1, np.zeros_like(x))


def test_scores_used_inside_a_chain_propagate_through_points():
    # downstream consumers of the score still receive point adjoints
    rng = np.random.default_rng(13)
    samples = rng.normal(size=(10, 1))
    x = rng.normal(size=(4, 1))

    def value():
        rec = tp.Tape()
        ex = rec.leaf(x)
        cloud = KdeCloud(rec.const(samples), 0.5)
        stepped = ex + tp.scale(kde.score_at(cloud, ex), 0.05)
        return rec, ex, tp.asum(tp.square(stepped))

    rec, ex, loss = value()
    got = rec.backward(loss).wrt(ex)
    fd = fd_grad(lambda: value()[2].value, x)
    assert np.allclose(got, fd, rtol=2e-5, atol=1e-9)
