"""Reflected selling strategies, realized payoff, Monte Carlo policy values."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
import math
from typing import Optional

import numpy as np

from .benchmark import average_drift_solution
from .dynamics import PathBundle, RngStreamSpec, simulate_observation
from .model_core import InvalidInputError, ModelParams

POLICIES = ("optimal", "precommitted", "immediate")
PATH_NAMESPACE = 2


def reflect(x_path, boundary, y: float, alpha: float) -> np.ndarray:
    """Cumulative sales ``min(y, running max of (x - boundary)^+ / alpha)``.

    ``boundary`` is a scalar or an array aligned with ``x_path``.
    """
    if y < 0:
        raise InvalidInputError("inventory must be non-negative")
    excess = np.maximum((np.asarray(x_path) - boundary) / alpha, 0.0)
    return np.minimum(np.maximum.accumulate(excess, axis=-1), y)


@dataclass
class ExecutionPath:
    base: PathBundle
    xi: np.ndarray
    x_controlled: np.ndarray
    y_path: np.ndarray
    x_start: float
    y_start: float
    kappa: float
    alpha: float
    sigma: float
    payoff: Optional[np.ndarray] = None
    depletion_time: Optional[np.ndarray] = None

    @classmethod
    def build(cls, path: PathBundle, xi, x, y, p: ModelParams) -> "ExecutionPath":
        xi = np.asarray(xi, dtype=float)
        ep = cls(path, xi, path.x_path - p.alpha * xi, y - xi, float(x), float(y),
                 p.kappa, p.alpha, p.sigma)
        ep.payoff = payoff(ep, p.r)
        ep.depletion_time = _depletion(ep)
        return ep

    @property
    def initial_jump(self):
        return self.xi[..., 0]


def _depletion(ep: ExecutionPath):
    if ep.y_start <= 0:
        return np.zeros(ep.xi.shape[:-1]) if ep.xi.ndim > 1 else 0.0
    done = ep.xi >= ep.y_start * (1 - 1e-12)
    first = np.argmax(done, axis=-1)
    t = np.where(done.any(axis=-1), ep.base.times[first], np.nan)
    return t if t.ndim else float(t)


def payoff(ep: ExecutionPath, r: float):
    """Discounted net proceeds of the sales in ``ep``.

    Increments larger than ten times the diffusive scale are priced with
    the exact lump-sale integral, smaller ones with the midpoint price.
    """
    xi = ep.xi
    prev = np.concatenate([np.zeros(xi.shape[:-1] + (1,)), xi[..., :-1]], axis=-1)
    dxi = xi - prev
    x_pre = ep.base.x_path - ep.alpha * prev
    a, k = ep.alpha, ep.kappa
    lump = np.exp(x_pre) * -np.expm1(-a * dxi) / a - k * dxi
    mid = (np.exp(x_pre - 0.5 * a * dxi) - k) * dxi
    thr = 10.0 * ep.sigma * math.sqrt(ep.base.dt) / a
    flow = np.where(dxi > thr, lump, mid)
    flow[..., 0] = lump[..., 0]
    out = (np.exp(-r * ep.base.times) * flow).sum(axis=-1)
    return out if out.ndim else float(out)


def _check_start(path: PathBundle, x, phi0):
    if np.any(np.abs(path.x_path[..., 0] - x) > 1e-12):
        raise InvalidInputError("path does not start at x")
    if phi0 is not None and np.any(np.abs(path.phi_path[..., 0] - phi0) > 1e-12 * max(1.0, phi0)):
        raise InvalidInputError("path does not start at phi0")


def optimal_execution(x, y, phi0, b, path: PathBundle, p: ModelParams) -> ExecutionPath:
    """Sell whenever the log-price exceeds the belief-dependent boundary b(phi)."""
    if getattr(b, "domain_tag", "b") != "b":
        raise InvalidInputError("optimal_execution needs a b boundary (likelihood ratio -> x)")
    _check_start(path, x, phi0)
    xi = reflect(path.x_path, b(path.phi_path), y, p.alpha)
    return ExecutionPath.build(path, xi, x, y, p)


def _flow(x_pre, dxi, a, k, thr):
    lump = np.exp(x_pre) * -np.expm1(-a * dxi) / a - k * dxi
    mid = (np.exp(x_pre - 0.5 * a * dxi) - k) * dxi
    return np.where(dxi > thr, lump, mid)


def fixed_threshold_payoffs(cases, p: ModelParams, n_paths: int, horizon: float, dt: float,
                            seed: int, block: int = 1024, chunk: int = 4096) -> np.ndarray:
    """Payoffs of reflection at fixed thresholds, streamed over time.

    ``cases`` is a sequence of ``(x, y, mu, threshold)``.  All cases share
    the Brownian increments; each path block uses the stream
    ``RngStreamSpec(seed, block_index, PATH_NAMESPACE)`` and draws its
    normals chunk by chunk in time, so with ``chunk`` covering the horizon
    the draws match ``simulate_observation`` for a fixed-drift scenario.
    Sales happen only when the drifted Brownian motion sets a new running
    maximum, so the payoff is accumulated on those steps alone; the result
    equals ``payoff`` of the corresponding reflected path.
    Returns an array of shape ``(len(cases), n_paths)``.
    """
    cases = [tuple(float(v) for v in c) for c in cases]
    if not cases:
        raise InvalidInputError("no cases given")
    if any(c[1] < 0 for c in cases):
        raise InvalidInputError("inventory must be non-negative")
    if n_paths < 1:
        raise InvalidInputError("n_paths must be >= 1")
    if not (dt > 0 and horizon >= dt):
        raise InvalidInputError("need dt > 0 and horizon >= dt")
    n_steps = max(1, int(round(horizon / dt)))
    a, k, sig = p.alpha, p.kappa, p.sigma
    thr = 10.0 * sig * math.sqrt(dt) / a
    mus = sorted({c[2] for c in cases})
    out = np.zeros((len(cases), n_paths))

    for b, start in enumerate(range(0, n_paths, block)):
        m = min(block, n_paths - start)
        gen = RngStreamSpec(seed, b, PATH_NAMESPACE).generator()
        w_end = np.zeros(m)
        run_max = {mu: np.zeros(m) for mu in mus}
        xi = np.empty((len(cases), m))
        pay = out[:, start:start + m]
        for i, (x, y, mu, xs) in enumerate(cases):
            xi[i] = min(y, max(x - xs, 0.0) / a)
            pay[i] = math.exp(x) * -math.expm1(-a * xi[i, 0]) / a - k * xi[i, 0]
        done = 0
        while done < n_steps:
            n = min(chunk, n_steps - done)
            steps = np.arange(done + 1, done + n + 1)
            t = steps * dt
            w = w_end[:, None] + np.cumsum(gen.standard_normal((m, n)) * math.sqrt(dt), axis=1)
            w_end = w[:, -1].copy()
            disc = np.exp(-p.r * t)
            for mu in mus:
                level = np.multiply(w, sig)
                level += mu * t
                # folding the carried maximum into the first column can flag a
                # step that sets no new record; it then sells nothing
                np.maximum(level[:, 0], run_max[mu], out=level[:, 0])
                top_run = np.maximum.accumulate(level, axis=1)
                rows, cols = np.nonzero(level == top_run)
                run_max[mu] = top_run[:, -1].copy()
                top = level[rows, cols]
                first = np.ones(rows.size, dtype=bool)
                first[1:] = rows[1:] != rows[:-1]
                last = np.ones(rows.size, dtype=bool)
                last[:-1] = rows[1:] != rows[:-1]
                for i, (x, y, cmu, xs) in enumerate(cases):
                    if cmu != mu:
                        continue
                    new = np.minimum(y, np.maximum(x + top - xs, 0.0) / a)
                    before = np.empty_like(new)
                    before[1:] = new[:-1]
                    before[first] = xi[i, rows[first]]
                    dxi = new - before
                    flow = _flow(x + top - a * before, dxi, a, k, thr)
                    pay[i] += np.bincount(rows, weights=disc[cols] * flow, minlength=m)
                    xi[i, rows[last]] = new[last]
            done += n
    return out


def precommitted_threshold(p: ModelParams, literal: bool = False) -> float:
    return average_drift_solution(p, literal).x_star


def precommitted_execution(x, y, pi0, path: PathBundle, p: ModelParams,
                           literal: bool = False) -> ExecutionPath:
    """Reflect at the fixed threshold of the prior-mean drift."""
    pp = p if pi0 == p.pi0 else p.replace(pi0=pi0)
    _check_start(path, x, None)
    xi = reflect(path.x_path, precommitted_threshold(pp, literal), y, p.alpha)
    return ExecutionPath.build(path, xi, x, y, p)


def immediate_execution(x, y, path: PathBundle, p: ModelParams) -> ExecutionPath:
    _check_start(path, x, None)
    return ExecutionPath.build(path, np.full_like(path.x_path, float(y)), x, y, p)


def immediate_payoff(x, y, p: ModelParams):
    """Proceeds of selling everything at once."""
    return math.exp(x) * -math.expm1(-p.alpha * y) / p.alpha - p.kappa * y


def default_horizon(p: ModelParams, tol: float = 1e-3) -> float:
    """Horizon after which discounting leaves less than ``tol`` of the value."""
    return math.log(1.0 / tol) / p.r


@dataclass
class PolicyEstimate:
    mean: float
    std_error: float
    n_paths: int
    payoffs: np.ndarray
    true_drift: np.ndarray
    depletion_time: np.ndarray
    initial_jump: np.ndarray
    stream: np.ndarray


def simulate_policy(x, y, pi0, policy, b, n_paths, horizon, dt, seed, p: ModelParams,
                    block: int = 256, threads: int = 1, literal: bool = False,
                    horizon_tol: float = 1e-3) -> PolicyEstimate:
    """Run ``policy`` on ``n_paths`` prior-draw paths, one RNG stream per block.

    The same ``seed`` gives the same paths for every policy, so estimates
    are paired.
    """
    if policy not in POLICIES:
        raise InvalidInputError(f"unknown policy {policy!r}")
    if n_paths < 1:
        raise InvalidInputError("n_paths must be >= 1")
    if math.exp(-p.r * horizon) > horizon_tol * (1 + 1e-9):
        raise InvalidInputError(
            f"horizon {horizon:g} too short: discount factor exceeds {horizon_tol:g}")
    phi0 = pi0 / (1.0 - pi0)
    starts = list(range(0, n_paths, block))

    def run(i):
        m = min(block, n_paths - starts[i])
        path = simulate_observation(p, x, pi0, horizon, dt, RngStreamSpec(seed, i, PATH_NAMESPACE),
                                    "prior-draw", n_paths=m)
        if policy == "optimal":
            ep = optimal_execution(x, y, phi0, b, path, p)
        elif policy == "precommitted":
            ep = precommitted_execution(x, y, pi0, path, p, literal)
        else:
            ep = immediate_execution(x, y, path, p)
        return (ep.payoff, path.true_drift, np.atleast_1d(ep.depletion_time),
                ep.initial_jump, np.full(m, i))

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, range(len(starts))))
    else:
        parts = [run(i) for i in range(len(starts))]
    pay, drift, dep, jump, stream = (np.concatenate(c) for c in zip(*parts))
    se = pay.std(ddof=1) / math.sqrt(pay.size) if pay.size > 1 else 0.0
    return PolicyEstimate(float(pay.mean()), float(se), pay.size, pay, drift, dep, jump, stream)


def estimate_policy_value(x, y, pi0, policy, b, n_paths, horizon, dt, seed, p: ModelParams,
                          **kw):
    """Monte Carlo ``(mean, std_error)`` of the realized payoff of ``policy``."""
    if y == 0:
        return 0.0, 0.0
    est = simulate_policy(x, y, pi0, policy, b, n_paths, horizon, dt, seed, p, **kw)
    return est.mean, est.std_error
