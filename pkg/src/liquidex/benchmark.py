"""Closed-form solution of the liquidation problem with a known drift."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .model_core import (AssumptionViolationError, InvalidInputError, ModelParams,
                         positive_root, threshold)


@dataclass(frozen=True)
class FullInfoSolution:
    mu: float
    n: float
    x_star: float
    kappa: float
    alpha: float

    def A(self, y):
        """Coefficient of exp(n x) in the waiting region."""
        y = np.asarray(y, dtype=float)
        n, k = self.n, self.kappa
        scale = k / (self.alpha * n * (n - 1.0)) * math.exp(-n * self.x_star)
        return scale * -np.expm1(-self.alpha * n * y)

    def value(self, x, y):
        return _value(self, x, y)

    def marginal(self, x):
        x = np.asarray(x, dtype=float)
        below = self.kappa / (self.n - 1.0) * np.exp(self.n * np.minimum(x - self.x_star, 0.0))
        out = np.where(x < self.x_star, below, np.exp(x) - self.kappa)
        return out if out.ndim else float(out)


def full_info_solution(p: ModelParams, mu: float) -> FullInfoSolution:
    if not p.r > mu + 0.5 * p.sigma ** 2:
        raise AssumptionViolationError("discount rate too small for drift %g" % mu)
    n = positive_root(mu, p.sigma, p.r)
    return FullInfoSolution(mu, n, threshold(n, p.kappa), p.kappa, p.alpha)


def _value(sol: FullInfoSolution, x, y):
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    if np.any(y < 0):
        raise InvalidInputError("inventory must be non-negative")
    a, k, xs, n = sol.alpha, sol.kappa, sol.x_star, sol.n
    excess = (x - xs) / a
    wait = sol.A(y) * np.exp(n * x)
    # lump sale down to x*, then the waiting-region value with what is left
    partial = (sol.A(np.maximum(y - excess, 0.0)) * math.exp(n * xs)
               + (np.exp(x) - math.exp(xs)) / a - k * excess)
    full = np.exp(x) * -np.expm1(-a * y) / a - k * y
    out = np.where(x < xs, wait, np.where(y <= excess, full, partial))
    return out if out.ndim else float(out)


def full_info_value(x, y, mu: float, p: ModelParams):
    return full_info_solution(p, mu).value(x, y)


def full_info_marginal(x, mu: float, p: ModelParams):
    return full_info_solution(p, mu).marginal(x)


def full_info_control(x: float, y: float, mu: float, path, p: ModelParams):
    """Reflect the known-drift path at x*; returns an ExecutionPath."""
    from .execution import ExecutionPath, reflect

    drift = path.true_drift
    if drift is not None and np.any(np.abs(np.asarray(drift) - mu) > 1e-15):
        raise InvalidInputError("path drift does not match mu")
    if np.any(np.abs(np.asarray(path.x_path)[..., 0] - x) > 1e-12):
        raise InvalidInputError("path does not start at x")
    sol = full_info_solution(p, mu)
    xi = reflect(path.x_path, sol.x_star, y, p.alpha)
    return ExecutionPath.build(path, xi, x, y, p)


def prior_mean_drift(p: ModelParams, literal: bool = False) -> float:
    """Prior-mean drift; ``literal`` swaps the weights of the two drifts."""
    if literal:
        return p.pi0 * p.mu0 + (1.0 - p.pi0) * p.mu1
    return p.pi0 * p.mu1 + (1.0 - p.pi0) * p.mu0


def average_drift_solution(p: ModelParams, literal: bool = False) -> FullInfoSolution:
    """Known-drift solution at the prior-mean drift."""
    return full_info_solution(p, prior_mean_drift(p, literal))
