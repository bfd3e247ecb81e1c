"""Stopping and control values from a solved boundary.

The marginal value in parabolic coordinates is

    vhat(x, z) = int_0^inf e^{-rs} E[-g(X_s, Z_s) 1{X_s >= c(Z_s)}] ds,

with X_s Gaussian (mean x + mu0 s, sd sigma sqrt(s)) and Z_s = z - (mu0+mu1)s/2
deterministic.  It is evaluated by deterministic quadrature: Simpson's rule
in a stretched time variable and Gauss-Legendre in space.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
import math
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .benchmark import average_drift_solution
from .boundary_solver import MonotoneBoundary, g_function
from .dynamics import sample_decoupled_Q
from .model_core import (InvalidInputError, ModelParams, derive, well_posedness_bounds)


class ConfigurationError(ValueError):
    pass


@dataclass
class QuadratureConfig:
    t_max: Optional[float] = None
    n_time: int = 400
    n_space: int = 64
    space_width: float = 8.0
    tol: float = 1e-6
    growth: float = 1.0
    # stretching of the time grid; spacing grows by about exp(stretch) from 0 to t_max
    stretch: float = 10.0

    def __post_init__(self):
        if int(self.n_time) < 2 or int(self.n_time) % 2:
            raise ConfigurationError("n_time must be an even integer >= 2")
        if int(self.n_space) < 2:
            raise ConfigurationError("n_space must be >= 2")
        if not self.space_width > 0:
            raise ConfigurationError("space_width must be positive")
        if not 0 < self.tol < 1:
            raise ConfigurationError("tol must lie in (0, 1)")
        if self.t_max is not None and not self.t_max > 0:
            raise ConfigurationError("t_max must be positive")
        self.n_time, self.n_space = int(self.n_time), int(self.n_space)

    @classmethod
    def from_dict(cls, d: dict) -> "QuadratureConfig":
        extra = set(d) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown quadrature field(s): {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def resolve(self, p: ModelParams) -> "QuadratureConfig":
        """Fill in ``t_max`` and check the truncated tail is below ``tol``."""
        rate = decay_rate(p)
        t_max = self.t_max
        if t_max is None:
            t_max = math.log(self.growth / self.tol) / rate
        if self.growth * math.exp(-rate * t_max) > self.tol * (1 + 1e-9):
            raise ConfigurationError(
                f"t_max={t_max:g} leaves a tail bound above tol={self.tol:g}")
        out = QuadratureConfig(**{**asdict(self), "t_max": float(t_max)})
        return out


def decay_rate(p: ModelParams) -> float:
    """Exponential decay rate of the integrand used for truncation."""
    b1, _, b3 = well_posedness_bounds(p)
    rate = p.r - b1 - b3
    if rate <= 0:
        rate = p.r - b1
    return rate


def time_nodes(q: QuadratureConfig):
    """Nodes and composite-Simpson weights on [0, t_max], dense near 0."""
    u = np.linspace(0.0, 1.0, q.n_time + 1)
    lam = q.stretch
    scale = q.t_max / math.expm1(lam)
    s = scale * np.expm1(lam * u)
    jac = scale * lam * np.exp(lam * u)
    w = np.ones(q.n_time + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    w *= (1.0 / q.n_time) / 3.0
    return s, w * jac


_GL = {}


def _legendre(n):
    if n not in _GL:
        _GL[n] = leggauss(n)
    return _GL[n]


def _c_eval(c, z, d):
    if callable(c) and not isinstance(c, MonotoneBoundary):
        return c(z)
    return np.interp(z, c.grid, c.values, left=d.x0_star, right=d.x1_star)


def vhat(x, z, c, q: QuadratureConfig, p: ModelParams, likelihood_term: bool = True,
         chunk: int = 64):
    """Marginal value in parabolic coordinates at points (x, z).

    ``c`` is a ``c``-tagged MonotoneBoundary, a callable z -> x, or a
    number (flat boundary).  ``likelihood_term=False`` drops the part of g
    carried by the likelihood ratio (known-drift reduction).
    """
    d = derive(p)
    if q.t_max is None:
        q = q.resolve(p)
    if isinstance(c, (int, float)):
        level = float(c)
        c = lambda zz: np.full_like(zz, level)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    x, z = np.broadcast_arrays(x, z)
    shape = x.shape
    xf, zf = x.ravel(), z.ravel()

    s, ws = time_nodes(q)
    nodes, wts = _legendre(q.n_space)
    k = q.space_width
    nu = -0.5 * (p.mu0 + p.mu1)
    ratio = (p.mu1 - p.mu0) / p.sigma ** 2
    disc = np.exp(-p.r * s) * ws
    s1, sd1, disc1 = s[1:], p.sigma * np.sqrt(s[1:]), disc[1:]
    out = np.empty(xf.size)
    for i0 in range(0, xf.size, chunk):
        xs, zs = xf[i0:i0 + chunk, None], zf[i0:i0 + chunk, None]
        # s = 0: the Gaussian collapses onto x
        c0 = _c_eval(c, zf[i0:i0 + chunk], d)
        phi0 = np.exp(ratio * (xs[:, 0] + zs[:, 0])) if likelihood_term else 0.0
        head = -g_function(xs[:, 0], None, p, phi=phi0) * (xs[:, 0] >= c0)

        m = xs + p.mu0 * s1
        zt = zs + nu * s1
        hi = m + k * sd1
        lo = np.clip(_c_eval(c, zt, d), m - k * sd1, hi)
        half = np.maximum(hi - lo, 0.0) * 0.5
        w = (lo + half)[..., None] + half[..., None] * nodes
        sd = sd1[..., None]
        dens = np.exp(-0.5 * np.square((w - m[..., None]) / sd)) / (sd * math.sqrt(2 * math.pi))
        lik = np.exp(ratio * (w + zt[..., None])) if likelihood_term else 0.0
        inner = (-g_function(w, None, p, phi=lik) * dens) @ wts * half
        out[i0:i0 + chunk] = head * disc[0] + inner @ disc1
    out = out.reshape(shape)
    return out if out.ndim else float(out)


def _to_phi(pi):
    pi = np.asarray(pi, dtype=float)
    if np.any(~(pi > 0)) or np.any(~(pi < 1)):
        raise InvalidInputError("belief must lie in (0, 1)")
    return pi / (1.0 - pi)


def marginal_value(x, pi, c, q: QuadratureConfig, p: ModelParams):
    """Marginal value v(x, pi) of one more unit of inventory."""
    phi = _to_phi(pi)
    z = (p.sigma ** 2 / (p.mu1 - p.mu0)) * np.log(phi) - np.asarray(x, dtype=float)
    out = vhat(x, z, c, q, p) / (1.0 + phi)
    return out if np.ndim(out) else float(out)


def simpson_nodes(a: float, b: float, step: float):
    n = max(2, 2 * math.ceil(abs(b - a) / (2 * step)))
    xs = np.linspace(a, b, n + 1)
    w = np.ones(n + 1)
    w[1:-1:2], w[2:-1:2] = 4.0, 2.0
    return xs, w * (b - a) / (3.0 * n)


def control_value(x, y, pi, c, q: QuadratureConfig, p: ModelParams, step: float = 0.01):
    """Value of holding ``y`` units: (1/alpha) * integral of v over [x - alpha y, x]."""
    x, y, pi = (np.asarray(v, dtype=float) for v in np.broadcast_arrays(x, y, pi))
    if np.any(y < 0):
        raise InvalidInputError("inventory must be non-negative")
    out = np.zeros(x.shape)
    for idx in np.ndindex(x.shape):
        if y[idx] == 0:
            continue
        nodes, w = simpson_nodes(x[idx] - p.alpha * y[idx], x[idx], step)
        v = marginal_value(nodes, np.full_like(nodes, pi[idx]), c, q, p)
        out[idx] = (w @ v) / p.alpha
    return out if out.ndim else float(out)


def average_drift_value(x, y, pi, p: ModelParams, literal: bool = False):
    """Known-drift value at the prior-mean drift for belief ``pi``."""
    x, y, pi = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (x, y, pi)))
    out = np.empty(x.shape)
    for u in np.unique(pi):
        sel = pi == u
        out[sel] = average_drift_solution(p.replace(pi0=float(u)), literal).value(x[sel], y[sel])
    return out if out.ndim else float(out)


def value_of_information(x, y, pi, c, q: QuadratureConfig, p: ModelParams,
                         literal: bool = False):
    """Value under learning minus the value at the prior-mean drift."""
    return control_value(x, y, pi, c, q, p) - average_drift_value(x, y, pi, p, literal)


def vhat_monte_carlo(x, z, c, p: ModelParams, n: int, rng):
    """Exponential-clock Monte Carlo estimate of vhat and its std error."""
    d = derive(p)
    ratio = p.sigma ** 2 / (p.mu1 - p.mu0)
    phi = math.exp((x + z) / ratio)
    smp = sample_decoupled_Q(x, phi, rng, n, p)
    zz = z - 0.5 * (p.mu0 + p.mu1) * smp.zeta
    val = -g_function(smp.x, None, p, phi=smp.phi) * (smp.x >= _c_eval(c, zz, d)) / p.r
    return float(val.mean()), float(val.std(ddof=1) / math.sqrt(n))


@dataclass
class ValueSurface:
    x_grid: np.ndarray
    pi_grid: np.ndarray
    y_grid: np.ndarray
    v: np.ndarray        # (x, pi)
    V: np.ndarray        # (x, y, pi)
    VA: np.ndarray       # (x, y, pi)

    @property
    def gap(self):
        return self.V - self.VA

    def rows(self):
        for i, x in enumerate(self.x_grid):
            for k, pi in enumerate(self.pi_grid):
                for j, y in enumerate(self.y_grid):
                    yield (x, pi, y, self.v[i, k], self.V[i, j, k], self.VA[i, j, k],
                           self.V[i, j, k] - self.VA[i, j, k])


def value_surface(x_grid, pi_grid, y_grid, c, q: QuadratureConfig, p: ModelParams,
                  literal: bool = False) -> ValueSurface:
    x_grid, pi_grid, y_grid = (np.atleast_1d(np.asarray(a, dtype=float))
                               for a in (x_grid, pi_grid, y_grid))
    q = q.resolve(p) if q.t_max is None else q
    X, P = np.meshgrid(x_grid, pi_grid, indexing="ij")
    v = marginal_value(X, P, c, q, p)
    X3, Y3, P3 = np.meshgrid(x_grid, y_grid, pi_grid, indexing="ij")
    V = control_value(X3, Y3, P3, c, q, p)
    VA = average_drift_value(X3, Y3, P3, p, literal)
    return ValueSurface(x_grid, pi_grid, y_grid, np.atleast_2d(v).reshape(X.shape),
                        np.asarray(V).reshape(X3.shape), np.asarray(VA).reshape(X3.shape))


class ValueFunction(BaseEstimator):
    """``fit(params, c)`` stores the boundary; ``predict`` evaluates v(x, pi)."""

    def __init__(self, n_time=400, n_space=64, space_width=8.0, tol=1e-6):
        self.n_time = n_time
        self.n_space = n_space
        self.space_width = space_width
        self.tol = tol

    def fit(self, params: ModelParams, c=None):
        if c is None:
            raise InvalidInputError("fit needs a boundary")
        c = getattr(c, "c", c)
        q = QuadratureConfig(n_time=self.n_time, n_space=self.n_space,
                             space_width=self.space_width, tol=self.tol)
        self.quadrature_ = q.resolve(params)
        self.params_ = params
        self.boundary_ = c
        return self

    def _check(self):
        if not hasattr(self, "boundary_"):
            raise NotFittedError("ValueFunction is not fitted yet; call fit first")

    def predict(self, X):
        """Rows of X are (x, pi); returns the marginal value."""
        self._check()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise InvalidInputError("X must have shape (n, 2) with columns x, pi")
        return marginal_value(X[:, 0], X[:, 1], self.boundary_, self.quadrature_, self.params_)

    def predict_control(self, X):
        """Rows of X are (x, y, pi); returns the control value."""
        self._check()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 3:
            raise InvalidInputError("X must have shape (n, 3) with columns x, y, pi")
        return control_value(X[:, 0], X[:, 1], X[:, 2], self.boundary_, self.quadrature_,
                             self.params_)
