"""Path loss, Adam, and the training loop.

The loss matches the network's values against the rolled-out y along every
trajectory, skipping node 0 where the two coincide by construction:

  loss = (1/N) sum_i sum_{j=1..n_steps} (phi(t_j, x_j^i) - y_j^i)^2 * dt

Soft terminal mode adds T * mean((phi(T, x_T) - g(x_T))^2) where g is the
problem's terminal value target.  Each step records a fresh rollout on a new
tape, backpropagates the scalar loss to the six parameter leaves, and applies
one bias-corrected Adam update.  Validation errors are measured every step on
a fixed held-out batch pushed through the deterministic probability flow
under the current parameters, comparing phi, grad phi, lap phi against the
problem's closed forms at the visited (t_j, x_j).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import dynamics, metrics, net
from . import tape as tp
from .problems import Problem


@dataclass
class TrainConfig:
    mode: str = "score"  # "score" | "fbsde"
    k_end: int = 200
    learning_rate: float = 0.02
    batch: int = 200
    n_steps: int = 10
    bandwidth: float = 0.35
    seed: int = 0
    width: int = 30
    score_detach: bool = False
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1.0e-8
    validation_size: int | None = None  # defaults to 1000 * dim

    def __post_init__(self):
        if self.mode not in ("score", "fbsde"):
            raise ValueError(f"unknown training mode {self.mode!r}")
        if self.k_end < 0:
            raise ValueError("k_end must be nonnegative")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    skipped: int = 0

    @staticmethod
    def init(params: net.NetParams) -> "AdamState":
        return AdamState(
            m=[np.zeros_like(a) for a in params.as_list()],
            v=[np.zeros_like(a) for a in params.as_list()],
        )


def adam_update(
    params: net.NetParams,
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1.0e-8,
) -> tuple[net.NetParams, AdamState]:
    """One bias-corrected Adam step; functional (inputs are not mutated).

    A non-finite gradient skips the update entirely (parameters and moments
    unchanged) and increments the skipped counter.
    """

    if not all(np.all(np.isfinite(g)) for g in grads):
        return params, replace(state, skipped=state.skipped + 1)
    step = state.step + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params.as_list(), grads, state.m, state.v):
        m1 = beta1 * m + (1.0 - beta1) * g
        v1 = beta2 * v + (1.0 - beta2) * (g * g)
        m_hat = m1 / (1.0 - beta1**step)
        v_hat = v1 / (1.0 - beta2**step)
        new_m.append(m1)
        new_v.append(v1)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
    return net.NetParams.from_list(new_p), AdamState(new_m, new_v, step, state.skipped)


def path_loss(traj: dynamics.TrajectoryBatch, params, wrapper: net.TerminalWrapper):
    """Trajectory-matching loss; recorded when the trajectory was recorded."""

    n = tp.value_of(traj.x_exprs[0] if traj.recorded else traj.x[0]).shape[0]
    dt = float(traj.times[-1]) / traj.n_steps
    xs = traj.x_exprs if traj.recorded else list(traj.x)
    ys = traj.y_exprs if traj.recorded else list(traj.y)
    total = None
    for j in range(1, traj.n_steps + 1):
        phi_j = net.phi_eval(params, wrapper, float(traj.times[j]), xs[j])
        term = tp.asum(tp.square(phi_j - ys[j]))
        total = term if total is None else total + term
    return tp.scale(total, dt / n)


def terminal_penalty(traj: dynamics.TrajectoryBatch, params, problem: Problem):
    """T * mean((phi(T, x_T) - g(x_T, pop))^2) for soft terminal problems."""

    if problem.terminal_mode != "soft":
        raise ValueError("terminal penalty applies to soft terminal mode only")
    wrapper = problem.make_wrapper()
    x_T = traj.x_exprs[-1] if traj.recorded else traj.x[-1]
    n = tp.value_of(x_T).shape[0]
    horizon = float(traj.times[-1])
    pop = dynamics.population_state(x_T, problem)
    phi_T = net.phi_eval(params, wrapper, horizon, x_T)
    resid = phi_T - problem.terminal_value_target(x_T, pop)
    return tp.scale(tp.asum(tp.square(resid)), horizon / n)


def validation_errors(
    params: net.NetParams,
    wrapper: net.TerminalWrapper,
    problem: Problem,
    cfg: TrainConfig,
    x0_val: np.ndarray,
) -> tuple[dict, dynamics.TrajectoryBatch]:
    """Relative L2 errors of (phi, grad, lap) pooled over a validation rollout."""

    rcfg = dynamics.RolloutConfig(
        n_particles=x0_val.shape[0],
        n_steps=cfg.n_steps,
        bandwidth=cfg.bandwidth,
        seed=0,
    )
    traj = dynamics.rollout_score(params, wrapper, problem, rcfg, x0=x0_val)
    phi_net, phi_ref = [], []
    grad_net, grad_ref = [], []
    lap_net, lap_ref = [], []
    for j, t in enumerate(traj.times):
        xj = traj.x[j]
        phi_net.append(net.phi_eval(params, wrapper, float(t), xj))
        grad_net.append(traj.z[j])
        lap_net.append(traj.h[j])
        phi_ref.append(problem.exact_phi(float(t), xj))
        grad_ref.append(problem.exact_grad_phi(float(t), xj))
        lap_ref.append(problem.exact_lap_phi(float(t), xj))
    errs = {
        "phi": metrics.rel_l2(np.concatenate(phi_net), np.concatenate(phi_ref)),
        "grad": metrics.rel_l2(np.concatenate(grad_net).ravel(), np.concatenate(grad_ref).ravel()),
        "lap": metrics.rel_l2(np.concatenate(lap_net), np.concatenate(lap_ref)),
    }
    return errs, traj


@dataclass
class TrainResult:
    params: net.NetParams
    report: metrics.RunReport
    adam: AdamState
    validation: dynamics.TrajectoryBatch | None  # None if validation itself diverged


def train(problem: Problem, cfg: TrainConfig) -> TrainResult:
    """Run the full optimization loop and report per-step curves and finals.

    Device-independent and bitwise reproducible: identical (problem, cfg)
    produce identical parameters and curves.  On divergence the report is
    returned with a diverged status and the curves collected so far.
    """

    wrapper = problem.make_wrapper()
    params = net.init_params(net.NetConfig(problem.dim, cfg.width), cfg.seed)
    state = AdamState.init(params)

    seeds = dynamics._split_seed(cfg.seed, cfg.k_end + 1)
    n_val = cfg.validation_size if cfg.validation_size is not None else 1000 * problem.dim
    x0_val = problem.rho0_sampler(seeds[0], n_val)

    roll = dynamics.rollout_score if cfg.mode == "score" else dynamics.rollout_fbsde
    loss_curve: list[float] = []
    err_curves: dict[str, list[float]] = {"phi": [], "grad": [], "lap": []}
    status = "ok"
    val_traj = None

    for k in range(cfg.k_end):
        rec = tp.Tape()
        pex = net.params_to_exprs(rec, params)
        rcfg = dynamics.RolloutConfig(
            n_particles=cfg.batch,
            n_steps=cfg.n_steps,
            bandwidth=cfg.bandwidth,
            seed=seeds[k + 1],
            score_detach=cfg.score_detach,
        )
        try:
            traj = roll(pex, wrapper, problem, rcfg)
        except dynamics.RolloutDivergence as exc:
            status = f"diverged(step={k}, node={exc.node})"
            break
        loss = path_loss(traj, pex, wrapper)
        if problem.terminal_mode == "soft":
            loss = loss + terminal_penalty(traj, pex, problem)
        grads = rec.backward(loss)
        glist = [grads.wrt(e) for e in pex]
        params, state = adam_update(
            params, glist, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps
        )
        loss_curve.append(float(loss.value))
        try:
            errs, val_traj = validation_errors(params, wrapper, problem, cfg, x0_val)
        except dynamics.RolloutDivergence:
            # A validation readout can blow up on a transient the optimizer
            # later recovers from; only the training rollout is fatal.
            val_traj = None
            errs = {key: float("nan") for key in err_curves}
        for key in err_curves:
            err_curves[key].append(errs[key])

    if val_traj is None:
        try:
            final_errs, val_traj = validation_errors(params, wrapper, problem, cfg, x0_val)
        except dynamics.RolloutDivergence as exc:
            if status == "ok":
                status = f"diverged(validation, node={exc.node})"
            final_errs = {key: float("nan") for key in err_curves}
    else:
        final_errs = {key: err_curves[key][-1] for key in err_curves}

    if val_traj is not None:
        fitted = metrics.fit_gaussian(val_traj.x[-1])
        mean_ref, cov_ref = problem.exact_moments(problem.horizon)
        w2 = metrics.gaussian_w2(fitted, metrics.GaussianSummary(mean_ref, cov_ref))
    else:
        w2 = float("nan")

    report = metrics.RunReport(
        problem=problem.name,
        dim=problem.dim,
        mode=cfg.mode,
        seed=cfg.seed,
        status=status,
        loss_curve=loss_curve,
        err_phi=err_curves["phi"],
        err_grad=err_curves["grad"],
        err_lap=err_curves["lap"],
        final_errors=final_errs,
        w2_terminal=w2,
        adam_skipped=state.skipped,
    )
    return TrainResult(params=params, report=report, adam=state, validation=val_traj)


def save_checkpoint(path, params: net.NetParams, state: AdamState) -> None:
    payload = {
        "params": net.params_to_jsonable(params),
        "adam": {
            "m": [a.tolist() for a in state.m],
            "v": [a.tolist() for a in state.v],
            "step": state.step,
            "skipped": state.skipped,
        },
        "step": state.step,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[net.NetParams, AdamState]:
    with open(path) as fh:
        payload = json.load(fh)
    params = net.params_from_jsonable(payload["params"])
    adam = payload["adam"]
    state = AdamState(
        m=[np.asarray(a, dtype=float) for a in adam["m"]],
        v=[np.asarray(a, dtype=float) for a in adam["v"]],
        step=int(adam["step"]),
        skipped=int(adam["skipped"]),
    )
    return params, state
