import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from liquidex.benchmark import (average_drift_solution, full_info_control, full_info_marginal,
                                full_info_solution, full_info_value, prior_mean_drift)
from liquidex.dynamics import RngStreamSpec, simulate_observation
from liquidex.model_core import AssumptionViolationError, InvalidInputError, ModelParams, derive

import oracles as O


def hjb_residuals(p, mu, x, y, h=1e-4):
    """Generator and selling residuals of w by central differences."""
    w = lambda xx, yy: full_info_value(xx, yy, mu, p)
    w0 = w(x, y)
    wx = (w(x + h, y) - w(x - h, y)) / (2 * h)
    wxx = (w(x + h, y) - 2 * w0 + w(x - h, y)) / (h * h)
    wy = (w(x, y + h) - w(x, y - h)) / (2 * h)
    scale_gen = np.abs(0.5 * p.sigma ** 2 * wxx) + np.abs(mu * wx) + np.abs(p.r * w0)
    gen = 0.5 * p.sigma ** 2 * wxx + mu * wx - p.r * w0
    sell = np.exp(x) - p.kappa - wy - p.alpha * wx
    scale_sell = np.exp(x) + p.kappa + np.abs(wy) + np.abs(p.alpha * wx)
    return gen / scale_gen, sell / scale_sell


@pytest.mark.parametrize("which", ["mu0", "mu1"])
def test_hjb_wait_region(p1, which):
    mu = getattr(p1, which)
    xs = full_info_solution(p1, mu).x_star
    x, y = np.meshgrid(np.linspace(xs - 2.0, xs - 1e-3, 100), np.linspace(0.05, 2.0, 20))
    gen, sell = hjb_residuals(p1, mu, x, y)
    assert np.max(np.abs(gen)) <= 1e-6
    assert np.max(sell) <= 1e-6


@pytest.mark.parametrize("which", ["mu0", "mu1"])
def test_hjb_sell_region(p1, which):
    mu = getattr(p1, which)
    xs = full_info_solution(p1, mu).x_star
    x, y = np.meshgrid(np.linspace(xs + 1e-3, xs + 1.0, 100), np.linspace(0.05, 2.0, 20))
    # stay off the kink between partial and full liquidation
    x = np.where(np.abs((x - xs) / p1.alpha - y) < 1e-3, x + 2e-3, x)
    gen, sell = hjb_residuals(p1, mu, x, y)
    assert np.max(np.abs(sell)) <= 1e-6
    assert np.max(gen) <= 1e-6


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0), st.booleans())
def test_value_matches_mpmath(x, y, high):
    p = ModelParams(**O.P1)
    mu = p.mu1 if high else p.mu0
    ref = float(O.mp_value(x, y, mu, O.P1))
    assert full_info_value(x, y, mu, p) == pytest.approx(ref, rel=1e-10, abs=1e-13)


def test_marginal_oracle(p1):
    d = derive(p1)
    assert full_info_marginal(d.x0_star - 1, p1.mu0, p1) == pytest.approx(O.P1_V0_BELOW, rel=1e-12)
    assert full_info_marginal(d.x0_star + 1, p1.mu0, p1) == pytest.approx(
        math.exp(d.x0_star + 1) - 3, rel=1e-14)


@pytest.mark.parametrize("which", ["mu0", "mu1"])
def test_branch_continuity(p1, which):
    mu = getattr(p1, which)
    xs = full_info_solution(p1, mu).x_star
    eps = 1e-9
    for y in (0.3, 1.0):
        assert full_info_value(xs - eps, y, mu, p1) == pytest.approx(
            full_info_value(xs + eps, y, mu, p1), abs=1e-7)
        xk = xs + p1.alpha * y
        assert full_info_value(xk - eps, y, mu, p1) == pytest.approx(
            full_info_value(xk + eps, y, mu, p1), abs=1e-7)
    # smooth fit of the marginal at the threshold
    assert full_info_marginal(xs - eps, mu, p1) == pytest.approx(
        full_info_marginal(xs + eps, mu, p1), abs=1e-7)


@given(st.floats(-1.0, 3.0), st.floats(0.01, 3.0))
def test_inventory_derivative_is_marginal(x, y):
    p = ModelParams(**O.P1)
    h = 1e-6
    wy = (full_info_value(x, y + h, p.mu0, p) - full_info_value(x, y - h, p.mu0, p)) / (2 * h)
    assert wy == pytest.approx(full_info_marginal(x - p.alpha * y, p.mu0, p), rel=1e-5, abs=1e-8)


def test_zero_inventory_and_monotone(p1):
    x = np.linspace(0, 3, 31)
    assert np.all(full_info_value(x, 0.0, p1.mu1, p1) == 0)
    v = full_info_value(x, 1.0, p1.mu1, p1)
    assert np.all(np.diff(v) > 0)
    assert np.all(full_info_value(x, 1.0, p1.mu1, p1) >= full_info_value(x, 1.0, p1.mu0, p1))
    with pytest.raises(InvalidInputError):
        full_info_value(1.0, -1.0, p1.mu0, p1)


def test_value_dominates_immediate(p1):
    x = np.linspace(0, 3, 31)
    for y in (0.2, 1.0, 3.0):
        imm = np.exp(x) * -np.expm1(-p1.alpha * y) / p1.alpha - p1.kappa * y
        assert np.all(full_info_value(x, y, p1.mu0, p1) >= np.maximum(imm, 0) - 1e-12)


def test_rejects_slow_discount(p1):
    with pytest.raises(AssumptionViolationError):
        full_info_solution(p1, 0.06)


def test_prior_mean_drift(p1):
    assert prior_mean_drift(p1) == pytest.approx(0.6 * 0.007 + 0.4 * -0.01)
    assert prior_mean_drift(p1, literal=True) == pytest.approx(0.6 * -0.01 + 0.4 * 0.007)
    sol = average_drift_solution(p1)
    assert sol.mu == pytest.approx(prior_mean_drift(p1))


def test_full_info_control_small_mc(p1):
    """Reflection at x* reproduces the closed form on a short Monte Carlo."""
    mu = p1.mu1
    xs = full_info_solution(p1, mu).x_star
    x, y = xs + 0.1, 0.5
    path = simulate_observation(p1, x, 0.5, 80.0, 0.01, RngStreamSpec(5, 0), "fixed-mu1",
                                n_paths=3000)
    ep = full_info_control(x, y, mu, path, p1)
    assert ep.initial_jump[0] == pytest.approx(0.2)
    assert np.all(np.diff(ep.xi, axis=1) >= 0)
    assert np.all(ep.x_controlled[:, 1:][ep.y_path[:, 1:] > 0] <= xs + 1e-12)
    se = ep.payoff.std(ddof=1) / math.sqrt(ep.payoff.size)
    # discretisation bias of reflection at dt=0.01 is a few 1e-3
    assert abs(ep.payoff.mean() - full_info_value(x, y, mu, p1)) < 3 * se + 0.01


def test_full_info_control_checks(p1):
    path = simulate_observation(p1, 1.0, 0.5, 1.0, 0.1, RngStreamSpec(1, 0), "fixed-mu0")
    with pytest.raises(InvalidInputError):
        full_info_control(1.0, 1.0, p1.mu1, path, p1)
    with pytest.raises(InvalidInputError):
        full_info_control(1.5, 1.0, p1.mu0, path, p1)


def test_examples(p1):
    for mu in (p1.mu0, p1.mu1):
        sol = full_info_solution(p1, mu)
        n, xs = sol.n, sol.x_star
        assert sol.marginal(xs) == pytest.approx(p1.kappa / (n - 1), rel=1e-14)
        assert math.exp(xs) - p1.kappa == pytest.approx(p1.kappa / (n - 1), rel=1e-12)
        assert n * p1.kappa / (n - 1) == pytest.approx(math.exp(xs), rel=1e-12)
        # third branch: sell everything at once
        x, y = xs + 0.5, 0.6
        assert full_info_value(x, y, mu, p1) == pytest.approx(
            math.exp(x) * (1 - math.exp(-p1.alpha * y)) / p1.alpha - p1.kappa * y, rel=1e-13)


def test_v0_below_v1(p1):
    x = np.linspace(-2, 4, 200)
    assert np.all(full_info_marginal(x, p1.mu0, p1) <= full_info_marginal(x, p1.mu1, p1))
    w = full_info_value(x[:, None], np.linspace(0, 3, 15)[None, :], p1.mu0, p1)
    assert np.all(np.diff(w, axis=0) >= 0) and np.all(np.diff(w, axis=1) >= 0)


def test_hjb_max_everywhere(p1):
    for mu in (p1.mu0, p1.mu1):
        xs = full_info_solution(p1, mu).x_star
        x, y = np.meshgrid(np.linspace(xs - 1.5, xs + 1.5, 101) + 3.3e-4, np.linspace(0.05, 2, 20))
        gen, sell = hjb_residuals(p1, mu, x, y)
        kink = (np.abs(x - xs) < 2e-4) | (np.abs((x - xs) / p1.alpha - y) < 2e-4)
        assert np.max(np.maximum(gen, sell)[~kink]) <= 1e-6


def test_average_drift_limits(p1, p2):
    lo = average_drift_solution(p1.replace(pi0=1e-12))
    hi = average_drift_solution(p1.replace(pi0=1 - 1e-12))
    assert lo.x_star == pytest.approx(full_info_solution(p1, p1.mu0).x_star, rel=1e-9)
    assert hi.x_star == pytest.approx(full_info_solution(p1, p1.mu1).x_star, rel=1e-9)
    assert prior_mean_drift(p2) == pytest.approx(-0.0054, abs=1e-15)


def test_control_examples(p1):
    xs0 = full_info_solution(p1, p1.mu0).x_star
    # the drift keeps the path below the threshold over a short horizon
    path = simulate_observation(p1, xs0 - 1.0, 0.5, 0.5, 0.01, RngStreamSpec(0, 0), "fixed-mu0")
    assert np.all(full_info_control(xs0 - 1.0, 1.0, p1.mu0, path, p1).xi == 0)
    path = simulate_observation(p1, xs0 + 0.5, 0.5, 1.0, 0.01, RngStreamSpec(0, 0), "fixed-mu0")
    ep = full_info_control(xs0 + 0.5, 1.0, p1.mu0, path, p1)
    assert ep.initial_jump == pytest.approx(1.0) and ep.depletion_time == 0.0
    path = simulate_observation(p1, xs0 + 0.1, 0.5, 5.0, 0.01, RngStreamSpec(1, 0), "fixed-mu0")
    ep = full_info_control(xs0 + 0.1, 1.0, p1.mu0, path, p1)
    assert ep.initial_jump == pytest.approx(0.2)
    assert ep.y_path[0] == pytest.approx(0.8)
    live = ep.y_path > 0
    assert np.all(ep.x_controlled[live] <= xs0 + 1e-12)
