"""Benchmark problems: exact solutions, HJB residuals, Riccati and moment oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from mfcscore import problems
from mfcscore.problems import (
    EntropyPotentialProblem,
    LinearQuadraticProblem,
    SystemicRiskProblem,
    build_problem,
    chi_curve,
    solve_riccati,
)


def test_alpha_identity_and_value():
    p = EntropyPotentialProblem(dim=1, gamma=0.1)
    assert abs(p.alpha**2 + p.gamma * p.alpha - 1.0) < 1e-15
    assert abs(p.alpha - 0.9512492197250394) < 1e-15
    # alpha depends only on gamma, not dimension
    assert EntropyPotentialProblem(dim=2, gamma=0.1).alpha == p.alpha


def test_entropy_running_cost_at_stationary_density():
    p = EntropyPotentialProblem(dim=1, gamma=0.1)
    rho = math.sqrt(p.alpha / (2 * math.pi))
    got = p.running_f(0.0, np.zeros((1, 1)), np.array([rho]), None)
    want = 0.1 * 0.5 * math.log(p.alpha / (2 * math.pi))
    assert np.allclose(got, [want], rtol=1e-14)


def test_lq_running_cost_vanishes_at_target():
    p = LinearQuadraticProblem(dim=1)
    x = np.random.default_rng(0).normal(size=(7, 1))
    rho_star = p.target_density(0.2, x)
    assert np.allclose(p.running_f(0.2, x, rho_star, None), 0.0, atol=1e-16)


def test_systemic_has_no_running_density_cost():
    p = SystemicRiskProblem()
    with pytest.raises(ValueError):
        p.running_f(0.0, np.zeros((1, 1)), np.ones(1), None)


def test_quadratic_hamiltonian_values():
    p = LinearQuadraticProblem(dim=2)
    pvec = np.array([[1.0, 2.0]])
    assert np.allclose(p.hamiltonian(0.0, np.zeros((1, 2)), pvec, None), [2.5])
    assert np.allclose(p.grad_p_hamiltonian(0.0, np.zeros((1, 2)), pvec, None), pvec)


def test_systemic_coupling_vanishes_at_the_mean():
    p = SystemicRiskProblem()
    x = np.full((3, 1), p.rho0_mean)
    pv = np.array([[0.5], [-1.0], [2.0]])
    assert np.allclose(p.hamiltonian(0.0, x, pv, None), 0.5 * pv[:, 0] ** 2)
    assert np.allclose(p.grad_p_hamiltonian(0.0, x, pv, None), pv)


@pytest.mark.parametrize(
    "make",
    [
        lambda: EntropyPotentialProblem(dim=2),
        lambda: LinearQuadraticProblem(dim=2),
        lambda: SystemicRiskProblem(),
    ],
    ids=["entropy", "lq", "systemic"],
)
def test_grad_p_matches_hamiltonian_finite_differences(make):
    prob = make()
    rng = np.random.default_rng(17)
    d = prob.dim
    x = rng.normal(size=(50, d))
    pv = rng.normal(size=(50, d))
    got = prob.grad_p_hamiltonian(0.3, x, pv, None)
    h = 1e-6
    for k in range(d):
        bump = np.zeros_like(pv)
        bump[:, k] = h
        fd = (
            prob.hamiltonian(0.3, x, pv + bump, None)
            - prob.hamiltonian(0.3, x, pv - bump, None)
        ) / (2 * h)
        assert np.allclose(got[:, k], fd, rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize(
    "make",
    [
        lambda: EntropyPotentialProblem(dim=1),
        lambda: LinearQuadraticProblem(dim=1),
        lambda: SystemicRiskProblem(),
    ],
    ids=["entropy", "lq", "systemic"],
)
def test_hamiltonian_is_legendre_transform_of_lagrangian(make):
    prob = make()
    rng = np.random.default_rng(23)
    x = rng.normal(size=(10, 1))
    pv = rng.uniform(-1.5, 1.5, size=(10, 1))
    H = prob.hamiltonian(0.2, x, pv, None)
    vgrid = np.linspace(-6.0, 6.0, 2401)
    best = np.full(10, -np.inf)
    for v in vgrid:
        vv = np.full((10, 1), v)
        cand = (vv * pv).sum(axis=1) - prob.lagrangian(0.2, x, vv, None)
        best = np.maximum(best, cand)
    assert np.max(np.abs(H - best)) < 1e-3


def test_entropy_hjb_residual_is_zero():
    for prob in (EntropyPotentialProblem(dim=1), EntropyPotentialProblem(dim=2)):
        rng = np.random.default_rng(5)
        x = rng.uniform(-2.0, 2.0, size=(100, prob.dim))
        for t in (0.0, 0.17, 0.5):
            dphi_dt = np.full(100, prob.phi_rate)  # phi is linear in t
            z = prob.exact_grad_phi(t, x)
            resid = (
                dphi_dt
                + prob.hamiltonian(t, x, z, None)
                + prob.inv_beta * prob.exact_lap_phi(t, x)
                - prob.running_f(t, x, prob.exact_density(t, x), None)
            )
            assert np.max(np.abs(resid)) < 1e-10


def test_lq_hjb_residual_is_zero():
    for prob in (LinearQuadraticProblem(dim=1), LinearQuadraticProblem(dim=2)):
        rng = np.random.default_rng(6)
        x = rng.uniform(-2.0, 2.0, size=(100, prob.dim))
        for t in (0.0, 0.31, 0.5):
            tau = prob.horizon - t + 1.0
            dphi_dt = prob.dim / (prob.beta * tau) - (x * x).sum(axis=1) / (2 * tau * tau)
            z = prob.exact_grad_phi(t, x)
            # along the optimum the density equals the target, so f = 0
            resid = (
                dphi_dt
                + prob.hamiltonian(t, x, z, None)
                + prob.inv_beta * prob.exact_lap_phi(t, x)
            )
            assert np.max(np.abs(resid)) < 1e-10


def test_systemic_hjb_residual_reduces_to_riccati():
    prob = SystemicRiskProblem()
    rng = np.random.default_rng(7)
    x = rng.uniform(-1.5, 1.5, size=(100, 1))
    for t in (0.0, 0.04, 0.09):
        eta = prob.eta(t)
        eta_dot = 2 * (prob.a + prob.q) * eta + eta * eta + prob.q**2 - prob.eps
        chi_dot = 0.5 * prob.sigma**2 * eta
        dx = prob.rho0_mean - x[:, 0]
        dphi_dt = -0.5 * eta_dot * dx * dx + chi_dot
        z = prob.exact_grad_phi(t, x)
        resid = (
            dphi_dt
            + prob.hamiltonian(t, x, z, None)
            + prob.inv_beta * prob.exact_lap_phi(t, x)
        )
        assert np.max(np.abs(resid)) < 1e-6


def riccati_closed_form(a, q, eps, c, T, t):
    """Two-root closed form of d eta/dt = (eta - r1)(eta - r2), eta(T) = c."""

    b = a + q
    disc = b * b - q * q + eps
    root = math.sqrt(disc)
    r1, r2 = -b + root, -b - root
    K = (c - r1) / (c - r2) * math.exp(-(r1 - r2) * T)
    S = K * math.exp((r1 - r2) * t)
    return (r1 - r2 * S) / (1.0 - S)


def test_riccati_solver_matches_closed_form():
    a, q, eps, c, T = 0.1, 0.5, 0.1, 1.0, 0.1
    t_grid, eta = solve_riccati(a, q, eps, c, T, 10_000)
    assert eta[-1] == c
    for i in (0, 1234, 5000, 9999):
        want = riccati_closed_form(a, q, eps, c, T, t_grid[i])
        assert abs(eta[i] - want) < 1e-8
    assert abs(riccati_closed_form(a, q, eps, c, T, 0.0) - 0.7975359525824885) < 1e-10


def test_riccati_separable_special_case():
    # eps = q^2 and a = -q reduce the equation to d eta/dt = eta^2
    t_grid, eta = solve_riccati(-0.5, 0.5, 0.25, 1.0, 0.1, 1000)
    assert abs(eta[0] - 1.0 / 1.1) < 1e-8
    want = 1.0 / (1.0 + (0.1 - t_grid))
    assert np.max(np.abs(eta - want)) < 1e-8


def test_riccati_equilibrium_stays_zero():
    _, eta = solve_riccati(-0.5, 0.5, 0.25, 0.0, 0.5, 500)
    assert np.array_equal(eta, np.zeros(501))


def test_riccati_integration_is_fourth_order():
    a, q, eps, c, T = 0.1, 0.5, 0.1, 1.0, 1.0

    def err(steps):
        t_grid, eta = solve_riccati(a, q, eps, c, T, steps)
        want = np.array([riccati_closed_form(a, q, eps, c, T, t) for t in t_grid])
        return np.max(np.abs(eta - want))

    ratio = err(50) / err(100)
    assert 10.0 < ratio < 24.0  # ~16x per halving


def test_riccati_blowup_is_reported():
    # backward flow of d eta/dt = eta^2 from eta(T) = -1 hits -inf inside [0, 2]
    with pytest.raises(FloatingPointError):
        solve_riccati(-0.5, 0.5, 0.25, -1.0, 2.0, 4000)


def test_chi_endpoints_and_closed_form():
    t_grid, eta = solve_riccati(-0.5, 0.5, 0.25, 1.0, 0.1, 10_000)
    chi = chi_curve(t_grid, eta, sigma=1.0)
    assert chi[-1] == 0.0
    # eta(t) = c/(1 + c(T - t)) integrates to log(1 + cT)
    assert abs(chi[0] - (-0.5 * math.log(1.1))) < 1e-6
    zero = chi_curve(t_grid, np.zeros_like(eta), sigma=1.0)
    assert np.array_equal(zero, np.zeros_like(eta))


def test_systemic_terminal_invariants():
    prob = SystemicRiskProblem()
    assert prob.eta(prob.horizon) == prob.c
    assert prob.chi(prob.horizon) == 0.0
    assert prob.inv_beta == 0.5 * prob.sigma**2


def test_variance_ode_pure_diffusion_limit():
    # c=0, eps=q^2, a=-q make the optimal drift vanish: Sigma(t) = Sigma(0) + sigma^2 t
    prob = SystemicRiskProblem(a=-0.5, q=0.5, eps=0.25, c=0.0, sigma=1.0, horizon=0.1)
    assert abs(prob.variance(0.0) - 0.25) < 1e-14
    assert abs(prob.variance(0.1) - 0.35) < 1e-10
    assert abs(prob.variance(0.04) - 0.29) < 1e-10


def test_variance_ode_matches_integrating_factor_quadrature():
    prob = SystemicRiskProblem()
    t, eta = prob.t_grid, prob.eta_grid
    rate = 2.0 * (prob.a + prob.q + eta)
    # integrating factor computed with trapezoid sums, independent of the RK4 sweep
    big = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (rate[:-1] + rate[1:]))])
    integrand = prob.sigma**2 * np.exp(big)
    inner = np.concatenate(
        [[0.0], np.cumsum(0.5 * np.diff(t) * (integrand[:-1] + integrand[1:]))]
    )
    want = np.exp(-big) * (prob.rho0_std**2 + inner)
    assert np.max(np.abs(prob.sigma2_grid - want)) < 1e-6


def test_exact_phi_matches_terminal_cost():
    lq = LinearQuadraticProblem(dim=2)
    x = np.random.default_rng(8).normal(size=(9, 2))
    assert np.allclose(lq.exact_phi(lq.horizon, x), -0.5 * (x * x).sum(axis=1), atol=1e-14)
    en = EntropyPotentialProblem(dim=1)
    x1 = np.random.default_rng(9).normal(size=(9, 1))
    assert np.allclose(en.exact_phi(en.horizon, x1), -np.asarray(en.terminal_cost(x1)), atol=1e-13)
    sy = SystemicRiskProblem()
    xs = np.random.default_rng(10).normal(size=(9, 1))
    dx = sy.rho0_mean - xs[:, 0]
    assert np.allclose(sy.exact_phi(sy.horizon, xs), -0.5 * sy.c * dx * dx, atol=1e-13)


def test_systemic_exact_gradient_vanishes_at_the_mean():
    prob = SystemicRiskProblem()
    x = np.full((4, 1), prob.rho0_mean)
    assert np.array_equal(prob.exact_grad_phi(0.03, x), np.zeros((4, 1)))
    assert np.allclose(prob.exact_lap_phi(0.03, x), -prob.eta(0.03))


def test_exact_moments():
    en = EntropyPotentialProblem(dim=2)
    for t in (0.0, 0.25, 0.5):
        mean, cov = en.exact_moments(t)
        assert np.array_equal(mean, np.zeros(2))
        assert np.allclose(cov, np.eye(2) / en.alpha, atol=1e-15)
    lq = LinearQuadraticProblem(dim=1, beta=5.0)
    mean, cov = lq.exact_moments(0.0)
    assert np.allclose(cov, 2.0 * (lq.horizon + 1.0) / 5.0)
    mean, cov = lq.exact_moments(lq.horizon)
    assert np.allclose(cov, 2.0 / 5.0)
    sy = SystemicRiskProblem()
    mean, cov = sy.exact_moments(0.0)
    assert np.allclose(cov, 0.25)


def test_rho0_samplers_are_deterministic_with_correct_moments():
    en = EntropyPotentialProblem(dim=1)
    a = en.rho0_sampler(42, 100_000)
    b = en.rho0_sampler(42, 100_000)
    assert np.array_equal(a, b)
    assert abs(a.mean()) < 3.0 / math.sqrt(en.alpha * 100_000)
    assert abs(a.var() - 1.0 / en.alpha) < 0.02 / en.alpha

    lq = LinearQuadraticProblem(dim=1, beta=5.0)
    s = lq.rho0_sampler(7, 100_000)
    want = 2.0 * (lq.horizon + 1.0) / lq.beta
    assert abs(s.var() - want) < 0.05 * want

    sy = SystemicRiskProblem()
    s = sy.rho0_sampler(9, 100_000)
    assert abs(s.mean() - sy.rho0_mean) < 3.0 * sy.rho0_std / math.sqrt(100_000)
    assert abs(s.var() - sy.rho0_std**2) < 0.05 * sy.rho0_std**2


def test_build_problem_registry_and_overrides():
    assert problems.PROBLEM_IDS == ("entropy1d", "entropy2d", "lq1d", "lq2d", "systemic")
    assert build_problem("entropy2d").dim == 2
    assert build_problem("lq1d").beta == 5.0
    p = build_problem("entropy1d", gamma=0.2)
    assert abs(p.alpha**2 + 0.2 * p.alpha - 1.0) < 1e-15
    q = build_problem("systemic", c=2.0)
    assert q.eta(q.horizon) == 2.0
    with pytest.raises(ValueError):
        build_problem("entropy3d")


def test_parameter_validation():
    with pytest.raises(ValueError):
        EntropyPotentialProblem(gamma=0.0)
    with pytest.raises(ValueError):
        LinearQuadraticProblem(beta=0.0)
    with pytest.raises(ValueError):
        SystemicRiskProblem(sigma=0.0)
