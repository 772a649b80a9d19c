"""Forward rollouts of the coupled state/value dynamics.

Score mode discretizes the deterministic forward-backward system with
forward Euler on the uniform grid t_j = j * dt, dt = T / n_steps:

  x_{j+1} = x_j + (D_p H(t_j, x_j, z_j) - (1/beta) * score_j) * dt
  y_{j+1} = y_j + (f_j - (1/beta) h_j - H_j + z_j . D_p H_j
                   - (1/beta) z_j . score_j) * dt

with z_j = grad phi(t_j, x_j), h_j = lap phi(t_j, x_j), y_0 = phi(0, x_0),
and score_j the kernel density score of the batch itself.  Per node the
order is: density cloud first, then z and h, then the Euler step.

FBSDE mode replaces the probability flow with Euler-Maruyama:

  X_{j+1} = X_j + D_p H(t_j, X_j, Z_j) * dt + sqrt(2 dt / beta) * xi_j
  Y_{j+1} = Y_j + (L(t_j, X_j, D_p H_j) + f_j) * dt
                + sqrt(2 dt / beta) * Z_j . xi_j

sharing one draw xi_j between the state and value updates.  Both modes
record through the tape when one is supplied, so a later backward pass
differentiates through the whole trajectory (including the density cloud,
unless score_detach suppresses the score's adjoints).

A rollout aborts with RolloutDivergence as soon as a state exceeds |x| > 1e6
or stops being finite, reporting the node index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kde, net
from . import tape as tp
from .problems import PopulationState, Problem

DIVERGENCE_LIMIT = 1.0e6


class RolloutDivergence(RuntimeError):
    def __init__(self, node: int, detail: str):
        super().__init__(f"trajectory diverged at node {node}: {detail}")
        self.node = node


@dataclass
class RolloutConfig:
    n_particles: int
    n_steps: int = 10
    bandwidth: float = 0.35
    seed: int = 0
    score_detach: bool = False

    def __post_init__(self):
        if self.n_particles < 1 or self.n_steps < 1:
            raise ValueError("n_particles and n_steps must be positive")
        if self.bandwidth <= 0.0:
            raise ValueError("bandwidth must be positive")


@dataclass
class TrajectoryBatch:
    """States, values and field evaluations on the (n_steps + 1)-node grid."""

    times: np.ndarray  # (n_steps + 1,)
    x: np.ndarray  # (n_steps + 1, n, d)
    y: np.ndarray  # (n_steps + 1, n)
    z: np.ndarray  # (n_steps + 1, n, d)
    h: np.ndarray  # (n_steps + 1, n)
    x_exprs: list | None = None
    y_exprs: list | None = None

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def recorded(self) -> bool:
        return self.x_exprs is not None


def time_grid(horizon: float, n_steps: int) -> np.ndarray:
    """t_j = j * dt with the final node pinned to T exactly."""

    dt = horizon / n_steps
    times = np.arange(n_steps + 1) * dt
    times[-1] = horizon
    return times


def population_state(x, problem: Problem, bandwidth: float | None = None) -> PopulationState:
    n = tp.value_of(x).shape[0]
    mean = tp.scale(tp.asum(x, axis=0), 1.0 / n)
    cloud = kde.KdeCloud(x, bandwidth) if bandwidth is not None else None
    return PopulationState(samples=x, mean=mean, cloud=cloud)


class NetFields:
    """phi and its spatial derivatives backed by the network."""

    def __init__(self, params, wrapper: net.TerminalWrapper):
        self.params = params
        self.wrapper = wrapper

    def phi(self, t, x, pop=None):
        return net.phi_eval(self.params, self.wrapper, t, x)

    def grad(self, t, x, pop=None):
        return net.phi_spatial_grad(self.params, self.wrapper, t, x)

    def lap(self, t, x, pop=None):
        return net.phi_spatial_laplacian(self.params, self.wrapper, t, x)


class ExactFields:
    """phi and its spatial derivatives from a problem's closed-form oracles."""

    def __init__(self, problem: Problem):
        self.problem = problem

    def phi(self, t, x, pop=None):
        return self.problem.exact_phi(t, tp.value_of(x), pop)

    def grad(self, t, x, pop=None):
        return self.problem.exact_grad_phi(t, tp.value_of(x), pop)

    def lap(self, t, x, pop=None):
        return self.problem.exact_lap_phi(t, tp.value_of(x), pop)


def _check_state(x, y, node: int) -> None:
    xv = tp.value_of(x)
    yv = tp.value_of(y)
    if not (np.all(np.isfinite(xv)) and np.all(np.isfinite(yv))):
        raise RolloutDivergence(node, "non-finite state")
    peak = float(np.max(np.abs(xv))) if xv.size else 0.0
    if peak > DIVERGENCE_LIMIT:
        raise RolloutDivergence(node, f"|x| reached {peak:.3e}")


def _kde_score_fn(cfg: RolloutConfig):
    def fn(t, x, pop):
        return kde.score_at(pop.cloud, x, detach=cfg.score_detach)

    return fn


def _kde_density_fn():
    def fn(t, x, pop):
        return kde.density_at(pop.cloud, x)

    return fn


def _exact_score_fn(problem: Problem, use_pop: bool):
    def fn(t, x, pop):
        return problem.exact_score(t, tp.value_of(x), pop if use_pop else None)

    return fn


def _exact_density_fn(problem: Problem):
    def fn(t, x, pop):
        return problem.exact_density(t, tp.value_of(x))

    return fn


def _finalize(problem, fields, times, xs, ys, zs, hs, bandwidth, recorded):
    t_end = float(times[-1])
    pop = population_state(xs[-1], problem, bandwidth)
    zs.append(fields.grad(t_end, xs[-1], pop))
    hs.append(fields.lap(t_end, xs[-1], pop))

    def stack(seq):
        return np.stack([np.asarray(tp.value_of(v)) for v in seq])

    return TrajectoryBatch(
        times=times,
        x=stack(xs),
        y=stack(ys),
        z=stack(zs),
        h=stack(hs),
        x_exprs=list(xs) if recorded else None,
        y_exprs=list(ys) if recorded else None,
    )


def _split_seed(seed: int, n: int) -> list[int]:
    """Deterministic child seeds, decoupled from the parent's own stream."""

    state = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    return [int(v) for v in state]


def _rollout_score_core(problem, cfg, x0, fields, score_fn, density_fn, rec):
    times = time_grid(problem.horizon, cfg.n_steps)
    dt = problem.horizon / cfg.n_steps
    ib = problem.inv_beta

    x = rec.const(x0) if rec is not None else np.asarray(x0, dtype=float)
    y = fields.phi(times[0], x)
    xs, ys, zs, hs = [x], [y], [], []
    for j in range(cfg.n_steps):
        _check_state(x, y, j)
        t = float(times[j])
        pop = population_state(x, problem, cfg.bandwidth)
        sc = score_fn(t, x, pop)
        z = fields.grad(t, x, pop)
        h = fields.lap(t, x, pop)
        dph = problem.grad_p_hamiltonian(t, x, z, pop)
        ham = problem.hamiltonian(t, x, z, pop)
        rhs = tp.dot(z, dph) - ham - tp.scale(h, ib) - tp.scale(tp.dot(z, sc), ib)
        if problem.has_running_f:
            rho = density_fn(t, x, pop)
            rhs = rhs + problem.running_f(t, x, rho, pop)
        x = x + tp.scale(dph - tp.scale(sc, ib), dt)
        y = y + tp.scale(rhs, dt)
        xs.append(x)
        ys.append(y)
        zs.append(z)
        hs.append(h)
    _check_state(x, y, cfg.n_steps)
    return _finalize(problem, fields, times, xs, ys, zs, hs, cfg.bandwidth, rec is not None)


def _recording_of(params) -> tp.Tape | None:
    return params.w1.tape if isinstance(params, net.ParamExprs) else None


def rollout_score(params, wrapper, problem: Problem, cfg: RolloutConfig, x0=None):
    """Roll the deterministic score dynamics under the network fields.

    When params are leaves of a recording (net.params_to_exprs), the whole
    trajectory is recorded, density cloud included, so path losses built on
    it can be differentiated; with a plain NetParams this is a pure numpy
    evaluation.  x0 defaults to a fresh draw from the initial density using
    cfg.seed.
    """

    if x0 is None:
        x0 = problem.rho0_sampler(cfg.seed, cfg.n_particles)
    fields = NetFields(params, wrapper)
    return _rollout_score_core(
        problem, cfg, x0, fields, _kde_score_fn(cfg), _kde_density_fn(), _recording_of(params)
    )


def rollout_exact(problem: Problem, cfg: RolloutConfig, x0=None, use_empirical_mean: bool = True):
    """Score dynamics with every field replaced by the problem's oracles.

    Used by consistency checks: under exact phi and exact score the entropy
    flow is stationary and y increments match the exact value along the path
    to first order in dt.
    """

    if x0 is None:
        x0 = problem.rho0_sampler(cfg.seed, cfg.n_particles)
    fields = ExactFields(problem)
    return _rollout_score_core(
        problem,
        cfg,
        x0,
        fields,
        _exact_score_fn(problem, use_empirical_mean),
        _exact_density_fn(problem),
        rec=None,
    )


def rollout_fbsde(params, wrapper, problem: Problem, cfg: RolloutConfig, x0=None):
    """Euler-Maruyama rollout of the stochastic forward-backward system."""

    seed_x0, seed_noise = _split_seed(cfg.seed, 2)
    if x0 is None:
        x0 = problem.rho0_sampler(seed_x0, cfg.n_particles)
    noise = np.random.default_rng(seed_noise).standard_normal(
        (cfg.n_steps, cfg.n_particles, problem.dim)
    )

    times = time_grid(problem.horizon, cfg.n_steps)
    dt = problem.horizon / cfg.n_steps
    vol = np.sqrt(2.0 * dt * problem.inv_beta)

    rec = _recording_of(params)
    fields = NetFields(params, wrapper)
    density_fn = _kde_density_fn()

    x = rec.const(x0) if rec is not None else np.asarray(x0, dtype=float)
    y = fields.phi(times[0], x)
    xs, ys, zs, hs = [x], [y], [], []
    for j in range(cfg.n_steps):
        _check_state(x, y, j)
        t = float(times[j])
        pop = population_state(x, problem, cfg.bandwidth)
        z = fields.grad(t, x, pop)
        h = fields.lap(t, x, pop)
        dph = problem.grad_p_hamiltonian(t, x, z, pop)
        rhs = problem.lagrangian(t, x, dph, pop)
        if problem.has_running_f:
            rho = density_fn(t, x, pop)
            rhs = rhs + problem.running_f(t, x, rho, pop)
        xi = noise[j]
        x = x + tp.scale(dph, dt) + vol * xi
        y = y + tp.scale(rhs, dt) + tp.scale(tp.dot(z, xi), vol)
        xs.append(x)
        ys.append(y)
        zs.append(z)
        hs.append(h)
    _check_state(x, y, cfg.n_steps)
    return _finalize(problem, fields, times, xs, ys, zs, hs, cfg.bandwidth, rec is not None)
