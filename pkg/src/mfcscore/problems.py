"""Benchmark mean field control problems and their exact solutions.

Each problem packages the model functions used by the rollouts (Hamiltonian
H, its momentum gradient D_p H, Lagrangian L, running density cost f,
terminal data) together with closed-form oracles for the optimal value phi,
its spatial derivatives, the optimal density's score and moments.  The model
functions are written against the dispatching tape helpers, so the same code
runs on plain arrays and on recorded expressions.

Conventions shared by all problems: states are (n, d) batches, momenta and
velocities likewise, scalar fields are (n,).  inv_beta is the diffusion
coefficient of the underlying Fokker-Planck equation (1/beta).

The three benchmarks:

* entropy potential: H = |p|^2/2, f = |x|^2/2 + gamma*log(rho), inv_beta = 1.
  With alpha = (-gamma + sqrt(gamma^2 + 4))/2 (so alpha^2 + gamma*alpha = 1)
  the optimal flow is the stationary Gaussian N(0, I/alpha) and
  phi(t, x) = C*t - alpha*|x|^2/2, C = d*alpha + (gamma*d/2)*log(alpha/2pi).
  Terminal cost V(x) = alpha*|x|^2/2 - C*T reproduces phi(T, .) = -V.

* linear-quadratic: H = |p|^2/2, f = gamma*(rho - rho_target(t, x)),
  V = |x|^2/2, inv_beta = 1/beta.  Along the optimum rho equals the target
  N(0, 2(T - t + 1)/beta I) and phi(t, x) = (d/beta)*log(1/(T - t + 1))
  - |x|^2/(2(T - t + 1)).

* systemic risk (1d): H = p^2/2 + (a + q)(xbar - x) p - ((eps - q^2)/2)
  (xbar - x)^2, f = 0, inv_beta = sigma^2/2, soft terminal data
  phi(T, x) = -(c/2)(xbar_T - x)^2.  With eta solving the backward Riccati
  equation d eta/dt = 2(a + q) eta + eta^2 + q^2 - eps, eta(T) = c, the value
  is phi(t, x) = -(eta_t/2)(xbar - x)^2 + chi_t where
  chi_t = -(sigma^2/2) int_t^T eta ds; hence grad phi = eta_t (xbar - x) and
  lap phi = -eta_t.  The population mean is constant in time and the optimal
  variance solves d Sigma/dt = -2(a + q + eta_t) Sigma + sigma^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .kde import KdeCloud
from .net import TerminalWrapper


@dataclass
class PopulationState:
    """Snapshot of the particle batch a model function may couple to."""

    samples: object  # (n, d) array or Expr
    mean: object  # (d,) array or Expr
    cloud: KdeCloud | None = None


def gaussian_log_density(mean: np.ndarray, cov_diag: float, x: np.ndarray) -> np.ndarray:
    """log of N(mean, cov_diag * I) at rows of x (isotropic covariance)."""

    d = x.shape[1]
    sq = ((x - mean) ** 2).sum(axis=1)
    return -0.5 * sq / cov_diag - 0.5 * d * np.log(2.0 * np.pi * cov_diag)


class Problem:
    """Shared surface; concrete problems fill in the model functions."""

    name: str
    dim: int
    horizon: float
    inv_beta: float
    terminal_mode: str
    has_running_f: bool
    couples_to_mean: bool = False

    # -- model functions (array/expression agnostic) --

    def hamiltonian(self, t, x, p, pop):
        raise NotImplementedError

    def grad_p_hamiltonian(self, t, x, p, pop):
        raise NotImplementedError

    def lagrangian(self, t, x, v, pop):
        raise NotImplementedError

    def running_f(self, t, x, rho, pop):
        raise NotImplementedError

    def rho0_sampler(self, seed: int, n: int) -> np.ndarray:
        raise NotImplementedError

    def make_wrapper(self) -> TerminalWrapper:
        raise NotImplementedError

    # -- oracles (plain numpy) --

    def exact_phi(self, t, x, pop=None) -> np.ndarray:
        raise NotImplementedError

    def exact_grad_phi(self, t, x, pop=None) -> np.ndarray:
        raise NotImplementedError

    def exact_lap_phi(self, t, x, pop=None) -> np.ndarray:
        raise NotImplementedError

    def exact_score(self, t, x, pop=None) -> np.ndarray:
        raise NotImplementedError

    def exact_density(self, t, x) -> np.ndarray:
        raise NotImplementedError

    def exact_moments(self, t) -> tuple[np.ndarray, np.ndarray]:
        """(mean (d,), covariance (d, d)) of the optimal density at time t."""

        raise NotImplementedError

    def sample_exact(self, t: float, seed: int, n: int) -> np.ndarray:
        mean, cov = self.exact_moments(t)
        rng = np.random.default_rng(seed)
        chol = np.linalg.cholesky(cov)
        return mean + rng.standard_normal((n, self.dim)) @ chol.T


@dataclass
class EntropyPotentialProblem(Problem):
    dim: int = 1
    gamma: float = 0.1
    horizon: float = 0.5

    name: str = field(init=False, default="entropy")
    terminal_mode: str = field(init=False, default="hard")
    has_running_f: bool = field(init=False, default=True)
    couples_to_mean: bool = field(init=False, default=False)
    inv_beta: float = field(init=False, default=1.0)

    def __post_init__(self):
        g = self.gamma
        if g <= 0.0:
            raise ValueError("gamma must be positive")
        self.alpha = 0.5 * (-g + np.sqrt(g * g + 4.0))
        d = self.dim
        self.phi_rate = d * self.alpha + 0.5 * g * d * np.log(self.alpha / (2.0 * np.pi))

    def hamiltonian(self, t, x, p, pop):
        return 0.5 * tp.dot(p, p)

    def grad_p_hamiltonian(self, t, x, p, pop):
        return p

    def lagrangian(self, t, x, v, pop):
        return 0.5 * tp.dot(v, v)

    def running_f(self, t, x, rho, pop):
        return 0.5 * tp.dot(x, x) + self.gamma * tp.log(rho)

    def rho0_sampler(self, seed: int, n: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return rng.standard_normal((n, self.dim)) / np.sqrt(self.alpha)

    def terminal_cost(self, x):
        return 0.5 * self.alpha * tp.dot(x, x) - self.phi_rate * self.horizon

    def terminal_cost_grad(self, x):
        return tp.scale(x, self.alpha)

    def terminal_cost_lap(self, x):
        # Constant in x: safe to return data even under a recording.
        n = tp.value_of(x).shape[0]
        return np.full(n, self.alpha * self.dim)

    def make_wrapper(self) -> TerminalWrapper:
        return TerminalWrapper(
            mode="hard",
            horizon=self.horizon,
            terminal_cost=self.terminal_cost,
            terminal_cost_grad=self.terminal_cost_grad,
            terminal_cost_lap=self.terminal_cost_lap,
        )

    def exact_phi(self, t, x, pop=None):
        return self.phi_rate * t - 0.5 * self.alpha * (x * x).sum(axis=1)

    def exact_grad_phi(self, t, x, pop=None):
        return -self.alpha * x

    def exact_lap_phi(self, t, x, pop=None):
        return np.full(x.shape[0], -self.alpha * self.dim)

    def exact_score(self, t, x, pop=None):
        return -self.alpha * x

    def exact_density(self, t, x):
        return np.exp(gaussian_log_density(np.zeros(self.dim), 1.0 / self.alpha, x))

    def exact_log_density(self, t, x):
        return gaussian_log_density(np.zeros(self.dim), 1.0 / self.alpha, x)

    def exact_moments(self, t):
        return np.zeros(self.dim), np.eye(self.dim) / self.alpha


@dataclass
class LinearQuadraticProblem(Problem):
    dim: int = 1
    beta: float = 5.0
    gamma: float = 0.1
    horizon: float = 0.5

    name: str = field(init=False, default="lq")
    terminal_mode: str = field(init=False, default="hard")
    has_running_f: bool = field(init=False, default=True)
    couples_to_mean: bool = field(init=False, default=False)

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError("beta must be positive")
        self.inv_beta = 1.0 / self.beta

    def _tau(self, t: float) -> float:
        return self.horizon - t + 1.0

    def hamiltonian(self, t, x, p, pop):
        return 0.5 * tp.dot(p, p)

    def grad_p_hamiltonian(self, t, x, p, pop):
        return p

    def lagrangian(self, t, x, v, pop):
        return 0.5 * tp.dot(v, v)

    def target_density(self, t, x):
        """rho_target(t, x) = N(0, 2(T - t + 1)/beta I), array/expression agnostic."""

        tau = self._tau(t)
        coef = (4.0 * np.pi * tau / self.beta) ** (-0.5 * self.dim)
        return tp.scale(tp.exp(tp.scale(tp.dot(x, x), -self.beta / (4.0 * tau))), coef)

    def running_f(self, t, x, rho, pop):
        return tp.scale(rho - self.target_density(t, x), self.gamma)

    def rho0_sampler(self, seed: int, n: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        std = np.sqrt(2.0 * (self.horizon + 1.0) / self.beta)
        return std * rng.standard_normal((n, self.dim))

    def terminal_cost(self, x):
        return 0.5 * tp.dot(x, x)

    def terminal_cost_grad(self, x):
        return x

    def terminal_cost_lap(self, x):
        n = tp.value_of(x).shape[0]
        return np.full(n, float(self.dim))

    def make_wrapper(self) -> TerminalWrapper:
        return TerminalWrapper(
            mode="hard",
            horizon=self.horizon,
            terminal_cost=self.terminal_cost,
            terminal_cost_grad=self.terminal_cost_grad,
            terminal_cost_lap=self.terminal_cost_lap,
        )

    def exact_phi(self, t, x, pop=None):
        tau = self._tau(t)
        return -self.dim / self.beta * np.log(tau) - (x * x).sum(axis=1) / (2.0 * tau)

    def exact_grad_phi(self, t, x, pop=None):
        return -x / self._tau(t)

    def exact_lap_phi(self, t, x, pop=None):
        return np.full(x.shape[0], -self.dim / self._tau(t))

    def exact_score(self, t, x, pop=None):
        return -self.beta * x / (2.0 * self._tau(t))

    def exact_density(self, t, x):
        return np.exp(self.exact_log_density(t, x))

    def exact_log_density(self, t, x):
        return gaussian_log_density(np.zeros(self.dim), 2.0 * self._tau(t) / self.beta, x)

    def exact_moments(self, t):
        return np.zeros(self.dim), 2.0 * self._tau(t) / self.beta * np.eye(self.dim)


def solve_riccati(a: float, q: float, eps: float, c: float, horizon: float, n_steps: int = 10_000):
    """Backward Riccati sweep with classical fourth-order one-step integration.

    d eta/dt = 2(a + q) eta + eta^2 + q^2 - eps on [0, T], eta(T) = c.
    Returns (t_grid ascending, eta on the grid).
    """

    def rhs(v):
        return 2.0 * (a + q) * v + v * v + q * q - eps

    h = horizon / n_steps
    eta = np.empty(n_steps + 1)
    eta[n_steps] = c
    v = c
    for i in range(n_steps, 0, -1):
        # step backward in time: t -> t - h
        k1 = rhs(v)
        k2 = rhs(v - 0.5 * h * k1)
        k3 = rhs(v - 0.5 * h * k2)
        k4 = rhs(v - h * k3)
        v = v - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(v) or abs(v) > 1e12:
            raise FloatingPointError("Riccati solution blew up before t = 0")
        eta[i - 1] = v
    t_grid = np.arange(n_steps + 1) * h
    t_grid[-1] = horizon
    return t_grid, eta


def chi_curve(t_grid: np.ndarray, eta: np.ndarray, sigma: float) -> np.ndarray:
    """chi(t) = -(sigma^2/2) * int_t^T eta ds via trapezoid sums on the grid."""

    dt = np.diff(t_grid)
    seg = 0.5 * dt * (eta[:-1] + eta[1:])
    tail = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]])
    return -0.5 * sigma * sigma * tail


@dataclass
class SystemicRiskProblem(Problem):
    a: float = 0.1
    q: float = 0.5
    eps: float = 0.1
    c: float = 1.0
    sigma: float = 1.0
    horizon: float = 0.1
    rho0_mean: float = 0.0
    rho0_std: float = 0.5
    riccati_steps: int = 10_000

    dim: int = field(init=False, default=1)
    name: str = field(init=False, default="systemic")
    terminal_mode: str = field(init=False, default="soft")
    has_running_f: bool = field(init=False, default=False)
    couples_to_mean: bool = field(init=False, default=True)

    def __post_init__(self):
        if self.sigma <= 0.0:
            raise ValueError("sigma must be positive")
        self.inv_beta = 0.5 * self.sigma * self.sigma
        self.t_grid, self.eta_grid = solve_riccati(
            self.a, self.q, self.eps, self.c, self.horizon, self.riccati_steps
        )
        self.chi_grid = chi_curve(self.t_grid, self.eta_grid, self.sigma)
        self.sigma2_grid = self._variance_curve()

    def eta(self, t: float) -> float:
        return float(np.interp(t, self.t_grid, self.eta_grid))

    def chi(self, t: float) -> float:
        return float(np.interp(t, self.t_grid, self.chi_grid))

    def _variance_curve(self) -> np.ndarray:
        """Forward sweep of d Sigma/dt = -2(a + q + eta_t) Sigma + sigma^2."""

        s2 = self.sigma * self.sigma
        t, eta = self.t_grid, self.eta_grid

        def rhs(ti, v):
            return -2.0 * (self.a + self.q + np.interp(ti, t, eta)) * v + s2

        out = np.empty_like(eta)
        out[0] = self.rho0_std * self.rho0_std
        v = out[0]
        for i in range(len(t) - 1):
            h = t[i + 1] - t[i]
            k1 = rhs(t[i], v)
            k2 = rhs(t[i] + 0.5 * h, v + 0.5 * h * k1)
            k3 = rhs(t[i] + 0.5 * h, v + 0.5 * h * k2)
            k4 = rhs(t[i] + h, v + h * k3)
            v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            out[i + 1] = v
        return out

    def variance(self, t: float) -> float:
        return float(np.interp(t, self.t_grid, self.sigma2_grid))

    def _mean_of(self, x, pop):
        if pop is not None:
            return pop.mean
        return np.full(self.dim, self.rho0_mean)

    def hamiltonian(self, t, x, p, pop):
        dx = self._mean_of(x, pop) - x
        return (
            0.5 * tp.dot(p, p)
            + (self.a + self.q) * tp.dot(dx, p)
            - 0.5 * (self.eps - self.q * self.q) * tp.dot(dx, dx)
        )

    def grad_p_hamiltonian(self, t, x, p, pop):
        dx = self._mean_of(x, pop) - x
        return p + tp.scale(dx, self.a + self.q)

    def lagrangian(self, t, x, v, pop):
        """Legendre transform of H in p: the running cost at drift v."""

        dx = self._mean_of(x, pop) - x
        ctrl = v - tp.scale(dx, self.a + self.q)
        return 0.5 * tp.dot(ctrl, ctrl) + 0.5 * (self.eps - self.q * self.q) * tp.dot(dx, dx)

    def running_f(self, t, x, rho, pop):
        raise ValueError("systemic risk has no running density cost")

    def rho0_sampler(self, seed: int, n: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return self.rho0_mean + self.rho0_std * rng.standard_normal((n, self.dim))

    def terminal_value_target(self, x, pop):
        """Target value at T for the soft penalty: -(c/2)(xbar - x)^2."""

        dx = self._mean_of(x, pop) - x
        return tp.scale(tp.dot(dx, dx), -0.5 * self.c)

    def make_wrapper(self) -> TerminalWrapper:
        return TerminalWrapper(mode="soft", horizon=self.horizon)

    def exact_phi(self, t, x, pop=None):
        dx = self._mean_of(x, pop) - x
        return -0.5 * self.eta(t) * (np.asarray(tp.value_of(dx)) ** 2).sum(axis=1) + self.chi(t)

    def exact_grad_phi(self, t, x, pop=None):
        dx = self._mean_of(x, pop) - x
        return self.eta(t) * np.asarray(tp.value_of(dx))

    def exact_lap_phi(self, t, x, pop=None):
        return np.full(x.shape[0], -self.eta(t))

    def exact_score(self, t, x, pop=None):
        dx = self._mean_of(x, pop) - x
        return np.asarray(tp.value_of(dx)) / self.variance(t)

    def exact_density(self, t, x):
        return np.exp(self.exact_log_density(t, x))

    def exact_log_density(self, t, x):
        mean = np.full(self.dim, self.rho0_mean)
        return gaussian_log_density(mean, self.variance(t), x)

    def exact_moments(self, t):
        return np.full(self.dim, self.rho0_mean), self.variance(t) * np.eye(self.dim)


PROBLEM_IDS = ("entropy1d", "entropy2d", "lq1d", "lq2d", "systemic")


def build_problem(problem_id: str, **overrides) -> Problem:
    """Instantiate a benchmark by id, applying parameter overrides."""

    if problem_id == "entropy1d":
        return EntropyPotentialProblem(dim=1, **overrides)
    if problem_id == "entropy2d":
        return EntropyPotentialProblem(dim=2, **overrides)
    if problem_id == "lq1d":
        return LinearQuadraticProblem(dim=1, **overrides)
    if problem_id == "lq2d":
        return LinearQuadraticProblem(dim=2, **overrides)
    if problem_id == "systemic":
        return SystemicRiskProblem(**overrides)
    raise ValueError(f"unknown problem id {problem_id!r} (known: {', '.join(PROBLEM_IDS)})")
