import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from liquidex.dynamics import (PathBundle, RngStreamSpec, as_generator, filter_likelihood,
                               sample_decoupled_Q, simulate_observation, write_path_csv)
from liquidex.model_core import InvalidInputError, ModelParams

import oracles as O


def test_filter_oracle(p1):
    assert filter_likelihood(1.1, 1.0, 1.5, 1.0, p1) == pytest.approx(O.P1_FILTER, rel=1e-12)


def test_filter_is_bayes_posterior(p1):
    """The closed form equals the ratio of discrete Gaussian likelihoods."""
    path = simulate_observation(p1, 1.0, 0.4, 5.0, 0.01, RngStreamSpec(3, 0), "fixed-mu0")
    dx = np.diff(path.x_path)
    ll = lambda mu: np.cumsum(-(dx - mu * 0.01) ** 2 / (2 * p1.sigma ** 2 * 0.01))
    ratio = (0.4 / 0.6) * np.exp(ll(p1.mu1) - ll(p1.mu0))
    np.testing.assert_allclose(path.phi_path[1:], ratio, rtol=1e-9)
    np.testing.assert_allclose(path.pi_path, path.phi_path / (1 + path.phi_path), rtol=1e-14)


def test_belief_martingale(p1):
    path = simulate_observation(p1, 1.0, 0.6, 20.0, 0.05, RngStreamSpec(9, 0), "prior-draw",
                                n_paths=20000)
    pi_t = path.pi_path[:, -1]
    se = pi_t.std(ddof=1) / math.sqrt(pi_t.size)
    assert abs(pi_t.mean() - 0.6) < 4 * se
    frac_high = np.mean(path.true_drift == p1.mu1)
    assert abs(frac_high - 0.6) < 4 * math.sqrt(0.24 / 20000)
    # beliefs lean towards the truth
    assert pi_t[path.true_drift == p1.mu1].mean() > pi_t[path.true_drift == p1.mu0].mean()


def test_fixed_scenarios_and_brownian_override(p1):
    m, n, dt = 4, 50, 0.02
    dW = np.random.default_rng(0).standard_normal((m, n)) * math.sqrt(dt)
    path = simulate_observation(p1, 0.3, 0.5, n * dt, dt, RngStreamSpec(0, 0), "fixed-mu1",
                                n_paths=m, brownian=dW)
    expect = 0.3 + np.cumsum(p1.mu1 * dt + p1.sigma * dW, axis=1)
    np.testing.assert_allclose(path.x_path[:, 1:], expect, rtol=1e-13)
    assert np.all(path.true_drift == p1.mu1)
    assert path.times[-1] == pytest.approx(1.0)
    pre = path.prefix(10)
    assert pre.x_path.shape == (m, 11) and pre.brownian.shape == (m, 10)


def test_single_path_shapes(p1):
    path = simulate_observation(p1, 0.0, 0.5, 1.0, 0.1, RngStreamSpec(0, 0))
    assert path.x_path.shape == (11,)
    assert isinstance(path.true_drift, float)
    assert path.n_paths == 1


def test_determinism_and_stream_independence(p1):
    a = simulate_observation(p1, 0.0, 0.5, 2.0, 0.01, RngStreamSpec(4, 2), n_paths=3)
    b = simulate_observation(p1, 0.0, 0.5, 2.0, 0.01, RngStreamSpec(4, 2), n_paths=3)
    c = simulate_observation(p1, 0.0, 0.5, 2.0, 0.01, RngStreamSpec(4, 3), n_paths=3)
    d = simulate_observation(p1, 0.0, 0.5, 2.0, 0.01, RngStreamSpec(4, 2, namespace=1), n_paths=3)
    assert np.array_equal(a.x_path, b.x_path)
    assert not np.array_equal(a.x_path, c.x_path)
    assert not np.array_equal(a.x_path, d.x_path)


def test_input_errors(p1):
    with pytest.raises(InvalidInputError):
        simulate_observation(p1, 0.0, 0.5, 1.0, 0.1, RngStreamSpec(0, 0), "sideways")
    with pytest.raises(InvalidInputError):
        simulate_observation(p1, 0.0, 1.5, 1.0, 0.1, RngStreamSpec(0, 0))
    with pytest.raises(InvalidInputError):
        simulate_observation(p1, 0.0, 0.5, 1.0, 0.0, RngStreamSpec(0, 0))
    with pytest.raises(InvalidInputError):
        simulate_observation(p1, 0.0, 0.5, 0.01, 0.1, RngStreamSpec(0, 0))
    with pytest.raises(InvalidInputError):
        RngStreamSpec(-1, 0)
    with pytest.raises(InvalidInputError):
        as_generator(42)
    with pytest.raises(InvalidInputError):
        sample_decoupled_Q(1.0, 0.0, RngStreamSpec(0, 0), 10, p1)
    with pytest.raises(InvalidInputError):
        filter_likelihood(1.0, 1.0, -1.0, 0.0, p1)


def test_q_sample_distribution(p1):
    n = 200_000
    s = sample_decoupled_Q(1.0, 2.0, RngStreamSpec(1, 0), n, p1)
    # clock is Exp(r)
    assert stats.kstest(s.zeta, "expon", args=(0, 1 / p1.r)).pvalue > 1e-3
    # given the clock, X is Gaussian with drift mu0
    u = (s.x - 1.0 - p1.mu0 * s.zeta) / (p1.sigma * np.sqrt(s.zeta))
    assert stats.kstest(u, "norm").pvalue > 1e-3
    # Phi is a Q-martingale: E[Phi_zeta] = phi
    se = s.phi.std(ddof=1) / math.sqrt(n)
    assert abs(s.phi.mean() - 2.0) < 4 * se


def test_q_sample_coupling_identity(p1):
    """Phi_zeta is the filter evaluated along X at time zeta."""
    s = sample_decoupled_Q(0.7, 1.3, RngStreamSpec(2, 0), 1000, p1)
    via_filter = filter_likelihood(s.x, 0.7, 1.3, s.zeta, p1)
    np.testing.assert_allclose(s.phi, via_filter, rtol=1e-10)


def test_q_sample_frozen_clock(p1):
    s = sample_decoupled_Q(0.0, 1.0, RngStreamSpec(2, 0), 5, p1, zeta=0.0)
    assert np.all(s.x == 0.0) and np.allclose(s.phi, 1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 1000))
def test_q_sample_reproducible(seed, stream):
    p = ModelParams(**O.P1)
    a = sample_decoupled_Q(1.0, 1.0, RngStreamSpec(seed, stream), 64, p)
    b = sample_decoupled_Q(1.0, 1.0, RngStreamSpec(seed, stream), 64, p)
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    assert np.all(a.zeta >= 0) and np.all(a.phi > 0)


def test_write_path_csv(tmp_path, p1):
    path = simulate_observation(p1, 0.0, 0.5, 0.5, 0.1, RngStreamSpec(0, 0), n_paths=2)
    f = tmp_path / "p.csv"
    write_path_csv(path, f, index=1)
    rows = f.read_text().splitlines()
    assert rows[0] == "t,x,phi,pi"
    assert len(rows) == 7
    assert float(rows[-1].split(",")[1]) == path.x_path[1, -1]


def test_one_step_law(p1):
    dt = 0.01
    path = simulate_observation(p1, 0.2, 0.5, dt, dt, RngStreamSpec(6, 0), "fixed-mu1",
                                n_paths=100_000)
    inc = path.x_path[:, 1] - path.x_path[:, 0]
    se = inc.std(ddof=1) / math.sqrt(inc.size)
    assert abs(inc.mean() - p1.mu1 * dt) < 3 * se
    assert inc.std() == pytest.approx(p1.sigma * math.sqrt(dt), rel=0.01)


def test_zero_noise_and_start(p1):
    n = 100
    path = simulate_observation(p1, 0.4, 0.3, 1.0, 0.01, RngStreamSpec(0, 0), "fixed-mu0",
                                n_paths=2, brownian=np.zeros((2, n)))
    expect = np.broadcast_to(0.4 + p1.mu0 * path.times, path.x_path.shape)
    np.testing.assert_allclose(path.x_path, expect, rtol=0, atol=1e-14)
    assert np.all(path.phi_path[:, 0] == pytest.approx(0.3 / 0.7))


def test_balanced_ray_keeps_belief(p1):
    t = np.linspace(0, 10, 11)
    x = 1.0 + 0.5 * (p1.mu0 + p1.mu1) * t
    np.testing.assert_allclose(filter_likelihood(x, 1.0, 1.5, t, p1), 1.5, rtol=1e-14)


def test_coupling_identity_on_paths(p1):
    path = simulate_observation(p1, 0.7, 0.4, 5.0, 0.01, RngStreamSpec(2, 0), n_paths=5)
    gamma = (p1.mu1 - p1.mu0) / p1.sigma
    z = (p1.sigma / gamma) * np.log(path.phi_path) - path.x_path
    z0 = (p1.sigma / gamma) * math.log(0.4 / 0.6) - 0.7
    np.testing.assert_allclose(z, np.broadcast_to(z0 - 0.5 * (p1.mu0 + p1.mu1) * path.times, z.shape),
                               rtol=0, atol=1e-12)


def test_filter_matches_euler_sde(p1):
    """Euler scheme for the belief SDE converges to the closed form at O(dt)."""
    gamma = (p1.mu1 - p1.mu0) / p1.sigma
    errs = []
    for dt in (0.02, 0.01):
        path = simulate_observation(p1, 0.0, 0.5, 50.0, dt, RngStreamSpec(4, 0), "fixed-mu0",
                                    brownian=np.random.default_rng(1).standard_normal(
                                        int(round(50 / dt))) * math.sqrt(dt))
        pi = np.empty_like(path.pi_path)
        pi[0] = 0.5
        dx = np.diff(path.x_path)
        for k in range(dx.size):
            innov = (dx[k] - (p1.mu0 + pi[k] * (p1.mu1 - p1.mu0)) * dt) / p1.sigma
            pi[k + 1] = pi[k] + gamma * pi[k] * (1 - pi[k]) * innov
        errs.append(np.max(np.abs(pi - path.pi_path)))
    assert errs[0] < 0.02
    assert errs[1] < errs[0]


def test_fixed_low_drift_belief_falls(p1):
    path = simulate_observation(p1, 0.0, 0.5, 200.0, 0.1, RngStreamSpec(5, 0), "fixed-mu0",
                                n_paths=2000)
    assert path.pi_path[:, -1].mean() < 0.45
    prior = simulate_observation(p1, 0.0, 0.5, 200.0, 0.1, RngStreamSpec(5, 0), n_paths=2000)
    m = prior.pi_path[:, -1]
    assert abs(m.mean() - 0.5) < 3 * m.std(ddof=1) / math.sqrt(m.size)


def test_clock_mean(p1):
    s = sample_decoupled_Q(0.0, 1.0, RngStreamSpec(11, 0), 1_000_000, p1)
    se = s.zeta.std(ddof=1) / 1000
    assert abs(s.zeta.mean() - 1 / p1.r) < 3 * se


def test_frozen_clock_gaussian_ks(p1):
    t = 4.0
    s = sample_decoupled_Q(0.3, 1.0, RngStreamSpec(12, 0), 100_000, p1, zeta=t)
    res = stats.kstest(s.x, "norm", args=(0.3 + p1.mu0 * t, p1.sigma * math.sqrt(t)))
    assert res.pvalue > 0.01


def test_q_martingale_fixed_horizon(p1):
    s = sample_decoupled_Q(0.3, 0.7, RngStreamSpec(13, 0), 100_000, p1, zeta=10.0)
    se = s.phi.std(ddof=1) / math.sqrt(s.phi.size)
    assert abs(s.phi.mean() - 0.7) < 3 * se
