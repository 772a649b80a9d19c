"""Path loss, Adam updates, and the training loop contract."""

from __future__ import annotations

import numpy as np
import pytest

from mfcscore import dynamics, net, training
from mfcscore import tape as tp
from mfcscore.dynamics import RolloutConfig, rollout_score
from mfcscore.problems import (
    EntropyPotentialProblem,
    SystemicRiskProblem,
    build_problem,
)
from mfcscore.training import (
    AdamState,
    TrainConfig,
    adam_update,
    load_checkpoint,
    path_loss,
    save_checkpoint,
    terminal_penalty,
    train,
    validation_errors,
)


def tiny_setup(seed=2, n_particles=4, n_steps=3, width=5):
    prob = EntropyPotentialProblem(dim=1)
    params = net.init_params(net.NetConfig(dim=1, width=width), seed=seed)
    wrapper = prob.make_wrapper()
    x0 = prob.rho0_sampler(seed + 1, n_particles)
    cfg = RolloutConfig(n_particles, n_steps, bandwidth=0.35, seed=seed + 1)
    return prob, params, wrapper, x0, cfg


def test_path_loss_vanishes_when_values_match():
    prob, params, wrapper, x0, cfg = tiny_setup()
    traj = rollout_score(params, wrapper, prob, cfg, x0=x0)
    matched = dynamics.TrajectoryBatch(
        times=traj.times,
        x=traj.x,
        y=np.stack(
            [net.phi_eval(params, wrapper, float(t), traj.x[j]) for j, t in enumerate(traj.times)]
        ),
        z=traj.z,
        h=traj.h,
    )
    assert float(tp.value_of(path_loss(matched, params, wrapper))) == 0.0


def test_path_loss_of_constant_offset_is_delta_squared_times_horizon():
    prob, params, wrapper, x0, cfg = tiny_setup()
    traj = rollout_score(params, wrapper, prob, cfg, x0=x0)
    delta = 0.37
    shifted = dynamics.TrajectoryBatch(
        times=traj.times,
        x=traj.x,
        y=np.stack(
            [
                net.phi_eval(params, wrapper, float(t), traj.x[j]) + delta
                for j, t in enumerate(traj.times)
            ]
        ),
        z=traj.z,
        h=traj.h,
    )
    got = float(tp.value_of(path_loss(shifted, params, wrapper)))
    assert np.allclose(got, delta**2 * prob.horizon, rtol=1e-12)


def recorded_loss_and_grads(prob, params, wrapper, x0, cfg):
    rec = tp.Tape()
    pex = net.params_to_exprs(rec, params)
    traj = rollout_score(pex, wrapper, prob, cfg, x0=x0)
    loss = path_loss(traj, pex, wrapper)
    grads = rec.backward(loss)
    return float(loss.value), [grads.wrt(e) for e in pex]


def plain_loss(prob, params, wrapper, x0, cfg):
    traj = rollout_score(params, wrapper, prob, cfg, x0=x0)
    return float(tp.value_of(path_loss(traj, params, wrapper)))


def test_path_loss_gradients_match_finite_differences_through_the_rollout():
    prob, params, wrapper, x0, cfg = tiny_setup()
    _, grads = recorded_loss_and_grads(prob, params, wrapper, x0, cfg)
    h = 1e-4
    arrays = params.as_list()
    for k, base in enumerate(arrays):
        fd = np.zeros_like(base)
        it = np.nditer(base, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][idx] += h
            minus[k][idx] -= h
            fd[idx] = (
                plain_loss(prob, net.NetParams.from_list(plus), wrapper, x0, cfg)
                - plain_loss(prob, net.NetParams.from_list(minus), wrapper, x0, cfg)
            ) / (2 * h)
        rel = np.abs(grads[k] - fd) / np.maximum(np.abs(fd), 1e-8)
        assert np.max(rel) < 1e-3


def test_score_detach_changes_gradients_but_not_the_loss():
    prob, params, wrapper, x0, cfg = tiny_setup()
    detached = RolloutConfig(
        cfg.n_particles, cfg.n_steps, cfg.bandwidth, seed=cfg.seed, score_detach=True
    )
    loss_a, grads_a = recorded_loss_and_grads(prob, params, wrapper, x0, cfg)
    loss_b, grads_b = recorded_loss_and_grads(prob, params, wrapper, x0, detached)
    assert np.allclose(loss_a, loss_b, rtol=1e-14)
    gap = max(np.max(np.abs(a - b)) for a, b in zip(grads_a, grads_b))
    assert gap > 1e-10


def test_adam_first_step_is_signed_learning_rate():
    params = net.init_params(net.NetConfig(dim=1, width=4), seed=0)
    grads = [np.full_like(a, 0.5) * (-1.0) ** i for i, a in enumerate(params.as_list())]
    new, state = adam_update(params, grads, AdamState.init(params), lr=0.01)
    for p0, g, p1 in zip(params.as_list(), grads, new.as_list()):
        assert np.allclose(p1, p0 - 0.01 * np.sign(g), atol=1e-8)
    assert state.step == 1 and state.skipped == 0
    # constant gradient keeps m_hat = g, v_hat = g^2: second step moves the same way
    newer, state = adam_update(new, grads, state, lr=0.01)
    for p1, g, p2 in zip(new.as_list(), grads, newer.as_list()):
        assert np.allclose(p2, p1 - 0.01 * np.sign(g), atol=1e-8)
    assert state.step == 2


def test_adam_skips_nonfinite_gradients():
    params = net.init_params(net.NetConfig(dim=1, width=4), seed=0)
    state0 = AdamState.init(params)
    grads = [np.zeros_like(a) for a in params.as_list()]
    grads[2][0, 0] = np.nan
    new, state = adam_update(params, grads, state0, lr=0.01)
    for p0, p1 in zip(params.as_list(), new.as_list()):
        assert np.array_equal(p0, p1)
    assert state.skipped == 1 and state.step == 0
    assert all(np.array_equal(m, z) for m, z in zip(state.m, state0.m))


def test_adam_does_not_mutate_inputs():
    params = net.init_params(net.NetConfig(dim=1, width=4), seed=1)
    before = [a.copy() for a in params.as_list()]
    state = AdamState.init(params)
    grads = [np.ones_like(a) for a in params.as_list()]
    adam_update(params, grads, state, lr=0.1)
    assert all(np.array_equal(a, b) for a, b in zip(params.as_list(), before))
    assert all(np.array_equal(m, np.zeros_like(m)) for m in state.m)
    assert state.step == 0


def test_terminal_penalty_matches_hand_computation():
    prob = SystemicRiskProblem()
    params = net.init_params(net.NetConfig(dim=1, width=6), seed=4)
    wrapper = prob.make_wrapper()
    x0 = prob.rho0_sampler(5, 8)
    cfg = RolloutConfig(8, 4, bandwidth=0.3, seed=5)
    traj = rollout_score(params, wrapper, prob, cfg, x0=x0)
    got = float(tp.value_of(terminal_penalty(traj, params, prob)))
    x_T = traj.x[-1]
    pop = dynamics.population_state(x_T, prob)
    resid = net.phi_eval(params, wrapper, prob.horizon, x_T) - tp.value_of(
        prob.terminal_value_target(x_T, pop)
    )
    want = prob.horizon * np.mean(resid**2)
    assert np.allclose(got, want, rtol=1e-12)


def test_terminal_penalty_rejects_hard_mode_problems():
    prob, params, wrapper, x0, cfg = tiny_setup()
    traj = rollout_score(params, wrapper, prob, cfg, x0=x0)
    with pytest.raises(ValueError):
        terminal_penalty(traj, params, prob)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(mode="sgd")
    with pytest.raises(ValueError):
        TrainConfig(k_end=-1)


def test_train_zero_steps_returns_initial_parameters():
    prob = build_problem("entropy1d")
    cfg = TrainConfig(k_end=0, batch=8, validation_size=32, width=6, seed=3)
    result = train(prob, cfg)
    init = net.init_params(net.NetConfig(prob.dim, 6), seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(result.params.as_list(), init.as_list()))
    assert result.report.loss_curve == []
    assert result.report.status == "ok"
    assert np.isfinite(result.report.final_errors["phi"])
    assert np.isfinite(result.report.w2_terminal)


def test_train_is_bitwise_reproducible():
    prob = build_problem("entropy1d")
    cfg = TrainConfig(k_end=3, batch=16, n_steps=4, validation_size=32, width=6, seed=1)
    a = train(prob, cfg)
    b = train(prob, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.params.as_list(), b.params.as_list()))
    assert a.report.loss_curve == b.report.loss_curve
    assert a.report.err_phi == b.report.err_phi
    assert a.report.w2_terminal == b.report.w2_terminal

    c = train(prob, TrainConfig(k_end=3, batch=16, n_steps=4, validation_size=32, width=6, seed=2))
    assert not all(
        np.array_equal(x, y) for x, y in zip(a.params.as_list(), c.params.as_list())
    )


def test_train_records_curves_each_step():
    prob = build_problem("systemic")
    cfg = TrainConfig(k_end=2, batch=12, n_steps=4, validation_size=24, width=6, seed=0)
    result = train(prob, cfg)
    assert len(result.report.loss_curve) == 2
    assert len(result.report.err_phi) == 2
    assert len(result.report.err_lap) == 2
    assert result.report.final_errors["lap"] == result.report.err_lap[-1]
    assert result.validation is not None


def test_train_reports_divergence_instead_of_crashing():
    prob = build_problem("entropy1d")
    cfg = TrainConfig(k_end=10, batch=8, n_steps=4, validation_size=16, width=6, seed=0,
                      learning_rate=1e6)
    result = train(prob, cfg)
    assert result.report.status.startswith("diverged")


def test_validation_errors_pool_every_node():
    prob = build_problem("entropy1d")
    params = net.init_params(net.NetConfig(1, 6), seed=2)
    wrapper = prob.make_wrapper()
    cfg = TrainConfig(batch=8, n_steps=5, validation_size=16, width=6)
    x0 = prob.rho0_sampler(0, 16)
    errs, traj = validation_errors(params, wrapper, prob, cfg, x0)
    assert set(errs) == {"phi", "grad", "lap"}
    assert all(np.isfinite(v) and v >= 0.0 for v in errs.values())
    assert traj.x.shape == (6, 16, 1)


def test_checkpoint_roundtrip_is_exact(tmp_path):
    params = net.init_params(net.NetConfig(dim=2, width=5), seed=9)
    state = AdamState.init(params)
    grads = [np.full_like(a, 0.25) for a in params.as_list()]
    params, state = adam_update(params, grads, state, lr=0.05)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, state)
    p2, s2 = load_checkpoint(path)
    assert all(np.array_equal(a, b) for a, b in zip(params.as_list(), p2.as_list()))
    assert all(np.array_equal(a, b) for a, b in zip(state.m, s2.m))
    assert all(np.array_equal(a, b) for a, b in zip(state.v, s2.v))
    assert (s2.step, s2.skipped) == (1, 0)
