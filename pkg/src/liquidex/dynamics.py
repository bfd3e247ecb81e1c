"""Path simulation and the closed-form Bayesian filter.

Two samplers live here.  ``simulate_observation`` draws observation paths
under the physical measure, optionally with a hidden drift drawn from the
prior.  ``sample_decoupled_Q`` samples the pair (log-price, likelihood
ratio) at an independent exponential time under the reference measure in
which the two decouple; it is exact, with no time stepping.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple, Optional, Union

import numpy as np

from .model_core import InvalidInputError, ModelParams

SCENARIOS = ("prior-draw", "fixed-mu0", "fixed-mu1")


@dataclass(frozen=True)
class RngStreamSpec:
    """Counter-based stream keyed by (master_seed, stream_id).

    Distinct ids give independent Philox streams; the same pair always
    reproduces the same draws, so workers need no coordination.
    ``namespace`` separates consumers (solver levels, path blocks) that
    share a master seed.
    """

    master_seed: int
    stream_id: int
    namespace: int = 0

    def __post_init__(self):
        if int(self.master_seed) < 0 or int(self.stream_id) < 0:
            raise InvalidInputError("seed and stream id must be non-negative")

    def generator(self, *extra: int) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.master_seed), int(self.namespace), int(self.stream_id),
                                     *map(int, extra)])
        return np.random.Generator(np.random.Philox(ss))


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStreamSpec):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidInputError("rng must be an RngStreamSpec or numpy Generator")


@dataclass
class PathBundle:
    """Sampled observation path(s); arrays are (steps+1,) or (paths, steps+1)."""

    dt: float
    times: np.ndarray
    brownian: np.ndarray
    x_path: np.ndarray
    phi_path: np.ndarray
    pi_path: np.ndarray
    true_drift: Union[float, np.ndarray, None]
    seed: Optional[RngStreamSpec] = None

    @property
    def n_paths(self) -> int:
        return 1 if self.x_path.ndim == 1 else self.x_path.shape[0]

    def prefix(self, n_steps: int) -> "PathBundle":
        """Path truncated after ``n_steps`` steps."""
        k = n_steps + 1
        return PathBundle(
            self.dt, self.times[:k], self.brownian[..., :n_steps], self.x_path[..., :k],
            self.phi_path[..., :k], self.pi_path[..., :k], self.true_drift, self.seed,
        )


def filter_likelihood(x_path, x0: float, phi0: float, times, p: ModelParams) -> np.ndarray:
    """Likelihood ratio along an observed log-price path (closed form)."""
    if not phi0 > 0:
        raise InvalidInputError("phi0 must be positive")
    x_path = np.asarray(x_path, dtype=float)
    times = np.asarray(times, dtype=float)
    gamma = (p.mu1 - p.mu0) / p.sigma
    drift = 0.5 * (p.mu0 + p.mu1) * times
    return phi0 * np.exp((gamma / p.sigma) * (x_path - x0 - drift))


def _n_steps(horizon: float, dt: float) -> int:
    if not (dt > 0 and np.isfinite(dt)):
        raise InvalidInputError("dt must be positive")
    if not horizon >= dt * (1 - 1e-12):
        raise InvalidInputError("horizon must be at least dt")
    return max(1, int(round(horizon / dt)))


def simulate_observation(p: ModelParams, x0: float, pi0: float, horizon: float, dt: float,
                         rng, scenario: str = "prior-draw", n_paths: Optional[int] = None,
                         brownian: Optional[np.ndarray] = None) -> PathBundle:
    """Simulate the uncontrolled log-price and its filter on a uniform grid.

    ``n_paths=None`` returns one-dimensional arrays.  ``brownian`` overrides
    the Brownian increments (shape must match); the drift label is still
    drawn from ``rng`` in prior-draw mode.
    """
    if scenario not in SCENARIOS:
        raise InvalidInputError(f"unknown scenario {scenario!r}")
    if not 0 < pi0 < 1:
        raise InvalidInputError("pi0 must lie in (0, 1)")
    n = _n_steps(horizon, dt)
    m = 1 if n_paths is None else int(n_paths)
    if m < 1:
        raise InvalidInputError("n_paths must be >= 1")
    gen = as_generator(rng)

    if scenario == "prior-draw":
        high = gen.random(m) < pi0
    else:
        high = np.full(m, scenario == "fixed-mu1")
    mu = np.where(high, p.mu1, p.mu0)

    if brownian is None:
        dW = gen.standard_normal((m, n)) * np.sqrt(dt)
    else:
        dW = np.asarray(brownian, dtype=float).reshape(m, n)

    times = np.arange(n + 1) * dt
    x = np.empty((m, n + 1))
    x[:, 0] = x0
    np.cumsum(mu[:, None] * dt + p.sigma * dW, axis=1, out=x[:, 1:])
    x[:, 1:] += x0

    phi = filter_likelihood(x, x0, pi0 / (1 - pi0), times, p)
    pi = phi / (1.0 + phi)
    seed = rng if isinstance(rng, RngStreamSpec) else None
    if n_paths is None:
        return PathBundle(dt, times, dW[0], x[0], phi[0], pi[0], float(mu[0]), seed)
    return PathBundle(dt, times, dW, x, phi, pi, mu, seed)


class QSample(NamedTuple):
    zeta: np.ndarray
    x: np.ndarray
    phi: np.ndarray


def sample_decoupled_Q(x: float, phi: float, rng, count: int, p: ModelParams,
                       zeta: Optional[np.ndarray] = None) -> QSample:
    """Exact draws of (zeta, X_zeta, Phi_zeta) with zeta ~ Exp(r).

    Both coordinates are driven by the same standard normal.  Passing
    ``zeta`` freezes the clock (test hook); normals are still drawn.
    """
    if not phi > 0:
        raise InvalidInputError("phi must be positive")
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    gen = as_generator(rng)
    u = gen.random(count)
    normal = gen.standard_normal(count)
    if zeta is None:
        zeta = -np.log1p(-u) / p.r
    else:
        zeta = np.broadcast_to(np.asarray(zeta, dtype=float), (count,)).copy()
    gamma = (p.mu1 - p.mu0) / p.sigma
    root = np.sqrt(zeta)
    xs = x + p.mu0 * zeta + p.sigma * root * normal
    phis = phi * np.exp(-0.5 * gamma * gamma * zeta + gamma * root * normal)
    return QSample(zeta, xs, phis)


def write_path_csv(path: PathBundle, filename, index: int = 0) -> None:
    """Dump one path as CSV with columns t, x, phi, pi."""
    sel = (lambda a: a) if path.x_path.ndim == 1 else (lambda a: a[index])
    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x", "phi", "pi"])
        for row in zip(path.times, sel(path.x_path), sel(path.phi_path), sel(path.pi_path)):
            w.writerow([repr(float(v)) for v in row])
