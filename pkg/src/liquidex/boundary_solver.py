"""Free-boundary solver for the partially observed stopping problem.

The selling boundary has four equivalent descriptions:

``b_inv``  x -> critical likelihood ratio, on [x0*, x1*]
``b``      likelihood ratio -> critical log-price
``a``      belief -> critical log-price, ``a(pi) = b(pi / (1 - pi))``
``c``      parabolic coordinate z -> critical log-price (and ``c_inv``)

The fixed point ``b_inv(x) = Gamma(b_inv(x), x; b_inv)`` is solved by Monte
Carlo.  Internally the unknown is parameterized by ``c`` on a grid of z
levels: along the decoupled dynamics z drifts deterministically, so the
residual at one level depends almost only on the boundary height at that
level.  Each sweep takes a secant-Newton step per level using common random
numbers, projects onto nondecreasing functions, and maps back to ``b_inv``
on the x-grid.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
import logging
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.isotonic import IsotonicRegression
from sklearn.exceptions import NotFittedError

from .dynamics import RngStreamSpec, as_generator, sample_decoupled_Q
from .model_core import (DerivedQuantities, InvalidInputError, ModelParams, derive,
                         require_admissible)

log = logging.getLogger(__name__)

DOMAIN_TAGS = ("b_inv", "b", "a", "c", "c_inv")
SOLVER_NAMESPACE = 1
# sweeps before oscillating levels start having their steps halved
SETTLE_AFTER = 8


class MonotoneBoundary:
    """Nondecreasing piecewise-linear function on a grid.

    Evaluation uses linear interpolation; outside the grid the function is
    constant unless ``left``/``right`` say otherwise.  ``inverse`` returns the
    generalized inverse ``q -> inf{u : f(u) > q}``.
    """

    def __init__(self, grid, values, domain_tag: str, clamp_hi: float = 1e6,
                 left: Optional[float] = None, right: Optional[float] = None):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float)
        if domain_tag not in DOMAIN_TAGS:
            raise InvalidInputError(f"unknown domain tag {domain_tag!r}")
        if grid.ndim != 1 or grid.shape != values.shape or grid.size < 2:
            raise InvalidInputError("grid and values must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(grid) <= 0):
            raise InvalidInputError("grid must be strictly increasing")
        if np.any(np.diff(values) < 0):
            raise InvalidInputError("values must be nondecreasing")
        self.grid = grid
        self.values = values
        self.domain_tag = domain_tag
        self.clamp_hi = float(clamp_hi)
        self.left = values[0] if left is None else float(left)
        self.right = values[-1] if right is None else float(right)

    def __call__(self, q):
        out = np.interp(q, self.grid, self.values, left=self.left, right=self.right)
        return out if np.ndim(out) else float(out)

    def inverse(self, q, below: float = -np.inf, above: float = np.inf):
        """Generalized inverse; ``below``/``above`` are returned off the range."""
        q = np.asarray(q, dtype=float)
        v, g = self.values, self.grid
        idx = np.searchsorted(v, q, side="right")
        inner = np.clip(idx, 1, len(v) - 1)
        v0, v1 = v[inner - 1], v[inner]
        g0, g1 = g[inner - 1], g[inner]
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(v1 > v0, (q - v0) / (v1 - v0), 1.0)
        out = g0 + np.clip(w, 0.0, 1.0) * (g1 - g0)
        out = np.where(idx == 0, below, out)
        out = np.where(idx >= len(v), above, out)
        return out if out.ndim else float(out)

    def __repr__(self):
        return (f"MonotoneBoundary({self.domain_tag}, n={self.grid.size}, "
                f"range=[{self.values[0]:.4g}, {self.values[-1]:.4g}])")


@dataclass
class SolverConfig:
    grid_size: int = 50
    mc_samples: int = 100_000
    tol: float = 1e-2
    max_iter: int = 50
    damping: float = 1.0
    clamp_hi: float = 1e6
    crn: bool = True
    seed: int = 0
    # secant step, per-sweep step cap and slope floor of the level update
    fd_step: float = 0.01
    max_step: float = 0.05
    min_slope: float = 0.05
    # half-width of the z levels in log-likelihood units; None -> log(clamp_hi)/2
    level_span: Optional[float] = None
    theta: float = 1.0

    def __post_init__(self):
        if int(self.grid_size) < 3:
            raise InvalidInputError("grid_size must be >= 3")
        if int(self.mc_samples) < 1000:
            raise InvalidInputError("mc_samples must be >= 1000")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if not 0 < self.damping <= 1:
            raise InvalidInputError("damping must lie in (0, 1]")
        if int(self.max_iter) < 1:
            raise InvalidInputError("max_iter must be >= 1")
        if not self.clamp_hi > 1:
            raise InvalidInputError("clamp_hi must exceed 1")
        if int(self.seed) < 0:
            raise InvalidInputError("seed must be non-negative")
        self.grid_size = int(self.grid_size)
        self.mc_samples = int(self.mc_samples)
        self.max_iter = int(self.max_iter)
        self.seed = int(self.seed)

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise InvalidInputError(f"unknown solver field(s): {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ConvergenceLog:
    converged: bool = False
    iterations: int = 0
    sup_change: List[float] = field(default_factory=list)
    level_change: List[float] = field(default_factory=list)
    mean_std_error: List[float] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# operator pieces

def g_function(x, z, p: ModelParams, phi=None):
    """Running reward rate of continuing, in parabolic coordinates.

    ``phi`` may be passed instead of deriving it from (x, z); it is the
    factor ``exp((gamma/sigma)(x+z))``.
    """
    x = np.asarray(x, dtype=float)
    ex = np.exp(x)
    half = 0.5 * p.sigma * p.sigma
    low = ex * (half + p.mu0 - p.r) + p.r * p.kappa
    high = ex * (half + p.mu1 - p.r) + p.r * p.kappa
    if phi is None:
        gamma = (p.mu1 - p.mu0) / p.sigma
        phi = np.exp((gamma / p.sigma) * (x + np.asarray(z, dtype=float)))
    out = low + phi * high
    return out if np.ndim(out) else float(out)


def gamma_operator(phi: float, x: float, f: MonotoneBoundary, p: ModelParams,
                   mc_samples: int, rng) -> tuple:
    """Monte Carlo estimate of the fixed-point operator and its std error.

    With ``f`` tagged ``b_inv`` the stopping indicator is ``Phi <= f(X)``,
    with ``f`` interpolated linearly and extended by 0 below x0* and
    ``clamp_hi`` above x1*.  A ``c``-tagged boundary gives the equivalent
    indicator ``X >= c(Z)``.
    """
    if not x > np.log(p.kappa):
        raise InvalidInputError("x must exceed log(kappa)")
    if not phi >= 0:
        raise InvalidInputError("phi must be non-negative")
    if f.domain_tag not in ("b_inv", "c"):
        raise InvalidInputError("gamma_operator needs a b_inv or c boundary")
    # phi = 0 keeps the clock and normals but zeroes the likelihood path
    s = sample_decoupled_Q(x, phi if phi > 0 else 1.0, rng, mc_samples, p)
    lik = s.phi if phi > 0 else np.zeros_like(s.phi)
    if f.domain_tag == "b_inv":
        stop = lik <= np.interp(s.x, f.grid, f.values, left=0.0, right=f.clamp_hi)
    else:
        gamma = (p.mu1 - p.mu0) / p.sigma
        z0 = (p.sigma / gamma) * np.log(phi) - x if phi > 0 else -np.inf
        zs = z0 - 0.5 * (p.mu0 + p.mu1) * s.zeta
        stop = s.x >= f(zs)
    val = -g_function(s.x, None, p, phi=lik) * stop
    den = p.r * (np.exp(x) - p.kappa)
    n = val.size
    return val.mean() / den - 1.0, val.std(ddof=1) / np.sqrt(n) / den


def x_grid(d: DerivedQuantities, grid_size: int) -> np.ndarray:
    eps = 1e-4 * (d.x1_star - d.x0_star)
    return np.linspace(d.x0_star + eps, d.x1_star - eps, grid_size)


def initial_boundary(d: DerivedQuantities, cfg: SolverConfig) -> MonotoneBoundary:
    """Exponential starting guess, 0 at x0* and exploding at x1*."""
    if not d.x0_star < d.x1_star:
        raise InvalidInputError("need x0* < x1*")
    xs = x_grid(d, cfg.grid_size)
    with np.errstate(over="ignore", divide="ignore"):
        vals = np.expm1(cfg.theta * (xs - d.x0_star) / (d.x1_star - xs))
    vals = np.minimum(vals, cfg.clamp_hi)
    vals[0], vals[-1] = 0.0, cfg.clamp_hi
    return MonotoneBoundary(xs, np.maximum.accumulate(vals), "b_inv", cfg.clamp_hi)


# --------------------------------------------------------------------------
# representation changes

def c_to_b_inv(c: MonotoneBoundary, xs: np.ndarray, p: ModelParams,
               clamp_hi: float) -> MonotoneBoundary:
    """Critical likelihood ratio on ``xs`` from a boundary in z coordinates.

    Between levels c is linear in z, so ``b_inv(x) = exp(k (x + c^-1(x)))``
    is exact for the piecewise-linear c.  Endpoints are pinned.
    """
    k = (p.mu1 - p.mu0) / p.sigma ** 2
    # constant extrapolation of c by c.left / c.right decides the off-grid cases
    z = c.inverse(xs, below=c.grid[0], above=c.grid[-1])
    z = np.where(xs < c.left, -np.inf, np.where(xs >= c.right, np.inf, z))
    with np.errstate(over="ignore"):
        vals = np.where(np.isfinite(z), np.exp(k * (xs + np.where(np.isfinite(z), z, 0.0))), 0.0)
    vals = np.where(z == np.inf, clamp_hi, vals)
    vals = np.minimum(vals, clamp_hi)
    vals[0], vals[-1] = 0.0, clamp_hi
    return MonotoneBoundary(xs, np.maximum.accumulate(vals), "b_inv", clamp_hi)


def boundary_transforms(b_inv: MonotoneBoundary, p: ModelParams) -> dict:
    """Derive b, a, c_inv and c from a ``b_inv`` boundary."""
    if b_inv.domain_tag != "b_inv":
        raise InvalidInputError("expected a b_inv boundary")
    d = derive(p)
    xs, vals = b_inv.grid, b_inv.values

    # b: generalized inverse of b_inv on its own knots
    phi_knots = np.unique(vals)
    if phi_knots.size < 2:
        raise InvalidInputError("b_inv is constant; cannot invert")
    # the top knot maps to the grid end so that b inverts b_inv exactly there
    b_vals = np.minimum(b_inv.inverse(phi_knots, below=d.x0_star, above=xs[-1]), d.x1_star)
    b = MonotoneBoundary(phi_knots, np.maximum.accumulate(b_vals), "b", b_inv.clamp_hi)

    pos = phi_knots > 0
    pi_knots = phi_knots[pos] / (1.0 + phi_knots[pos])
    keep = np.concatenate([[True], np.diff(pi_knots) > 0])
    a = MonotoneBoundary(pi_knots[keep], b.values[pos][keep], "a", b_inv.clamp_hi,
                         left=d.x0_star, right=d.x1_star)

    ratio = p.sigma ** 2 / (p.mu1 - p.mu0)
    inside = vals > 0
    xz = xs[inside]
    zc = np.maximum.accumulate(ratio * np.log(vals[inside]) - xz)
    c_inv = MonotoneBoundary(xz, zc, "c_inv", b_inv.clamp_hi)
    zk, first = np.unique(zc, return_index=True)
    if zk.size >= 2:
        c_vals = c_inv.inverse(zk, below=d.x0_star, above=d.x1_star)
        c_vals = np.clip(np.maximum.accumulate(c_vals), d.x0_star, d.x1_star)
        c = MonotoneBoundary(zk, c_vals, "c", b_inv.clamp_hi)
    else:
        c = None
    return {"b": b, "a": a, "c": c, "c_inv": c_inv}


def b_to_a(b: MonotoneBoundary, pi):
    """Boundary in belief coordinates evaluated exactly through ``b``."""
    pi = np.asarray(pi, dtype=float)
    if np.any(~(pi > 0)) or np.any(~(pi < 1)):
        raise InvalidInputError("belief must lie in (0, 1)")
    return b(pi / (1.0 - pi))


# --------------------------------------------------------------------------
# solver

class _Levels:
    """Frozen Monte Carlo draws for every z level (one RNG stream per level)."""

    def __init__(self, p, d, zs, cfg, threads):
        self.p, self.zs, self.cfg, self.threads = p, zs, cfg, threads
        self.lo, self.hi = d.x0_star, d.x1_star
        self.nu = -0.5 * (p.mu0 + p.mu1)
        self.k = (p.mu1 - p.mu0) / p.sigma ** 2
        self.draws = [None] * len(zs)

    def _draw(self, j, sweep):
        cfg = self.cfg
        spec = RngStreamSpec(cfg.seed, j, namespace=SOLVER_NAMESPACE)
        gen = spec.generator() if cfg.crn else spec.generator(sweep)
        u = gen.random(cfg.mc_samples)
        normal = gen.standard_normal(cfg.mc_samples)
        zeta = -np.log1p(-u) / self.p.r
        dx = self.p.mu0 * zeta + self.p.sigma * np.sqrt(zeta) * normal
        return dx, self.zs[j] + self.nu * zeta

    def level(self, j, c_vals, h, sweep):
        """Residual rho = (Gamma - phi)/(1 + phi) at level j for c and c + h."""
        if self.draws[j] is None or not self.cfg.crn:
            d = self._draw(j, sweep)
            if self.cfg.crn:
                self.draws[j] = d
        else:
            d = self.draws[j]
        dx, zz = d
        p = self.p
        cj = c_vals[j]
        x = cj + dx
        n = dx.size
        out = []
        for shift in (0.0, h):
            # the bump moves the start and the whole boundary, so the
            # stopping set is recomputed; off-grid levels keep x0*/x1*
            stop = x + shift >= np.interp(zz, self.zs, c_vals + shift, left=self.lo, right=self.hi)
            xv = x[stop] + shift
            val = -g_function(xv, None, p, phi=np.exp(self.k * (xv + zz[stop])))
            den = p.r * (np.exp(cj + shift) - p.kappa)
            mean = val.sum() / n
            var = (np.square(val).sum() / n - mean * mean) * n / (n - 1)
            gam = mean / den - 1.0
            se = np.sqrt(max(var, 0.0) / n) / den
            phi0 = np.exp(self.k * (cj + shift + self.zs[j]))
            out.append(((gam - phi0) / (1.0 + phi0), se / (1.0 + phi0), gam, se))
        return out

    def sweep(self, c_vals, h, sweep):
        idx = range(len(self.zs))
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                res = list(ex.map(lambda j: self.level(j, c_vals, h, sweep), idx))
        else:
            res = [self.level(j, c_vals, h, sweep) for j in idx]
        base = np.array([r[0] for r in res])
        bump = np.array([r[1] for r in res])
        return base, bump


def level_grid(p: ModelParams, d: DerivedQuantities, cfg: SolverConfig) -> np.ndarray:
    span = cfg.level_span if cfg.level_span is not None else 0.5 * np.log(cfg.clamp_hi)
    ratio = p.sigma ** 2 / (p.mu1 - p.mu0)
    mid = 0.5 * (d.x0_star + d.x1_star)
    return ratio * np.linspace(-span, span, cfg.grid_size) - mid


@dataclass
class BoundarySolution:
    b_inv: MonotoneBoundary
    c: MonotoneBoundary
    c_std_error: np.ndarray
    log: ConvergenceLog
    params: ModelParams
    derived: DerivedQuantities

    def transforms(self) -> dict:
        return boundary_transforms(self.b_inv, self.params)

    def a(self, pi):
        return b_to_a(self.transforms()["b"], pi)

    def a_std_error(self, pi):
        """Monte Carlo std error of a(pi), read off the level through that point."""
        pi = np.asarray(pi, dtype=float)
        x = self.a(pi)
        z = (self.params.sigma ** 2 / (self.params.mu1 - self.params.mu0)) * np.log(pi / (1 - pi)) - x
        return np.interp(z, self.c.grid, self.c_std_error)


def _project(c, weights, lo, hi):
    iso = IsotonicRegression(y_min=lo, y_max=hi, increasing=True)
    return iso.fit_transform(np.arange(c.size, dtype=float), c, sample_weight=weights)


def solve(p: ModelParams, cfg: Optional[SolverConfig] = None, threads: int = 1,
          init: Optional[MonotoneBoundary] = None) -> BoundarySolution:
    cfg = cfg or SolverConfig()
    require_admissible(p)
    d = derive(p)
    xs = x_grid(d, cfg.grid_size)
    zs = level_grid(p, d, cfg)

    b0 = init if init is not None else initial_boundary(d, cfg)
    c = np.clip(_b_inv_on_levels(b0, zs, p, d), d.x0_star, d.x1_star)
    c = np.maximum.accumulate(c)
    b_old = c_to_b_inv(MonotoneBoundary(zs, c, "c", left=d.x0_star, right=d.x1_star), xs, p, cfg.clamp_hi).values

    levels = _Levels(p, d, zs, cfg, max(1, int(threads)))
    clog = ConvergenceLog()
    c_se = np.full(zs.size, np.nan)
    h = cfg.fd_step
    relax = np.full(zs.size, cfg.damping)
    last_move = np.zeros(zs.size)
    for it in range(cfg.max_iter):
        base, bump = levels.sweep(c, h, it)
        rho, rho_se = base[:, 0], base[:, 1]
        slope = np.maximum(-(bump[:, 0] - rho) / h, cfg.min_slope)
        step = np.clip(rho / slope, -cfg.max_step, cfg.max_step)
        c_new = np.clip(c + relax * step, d.x0_star, d.x1_star)
        weights = np.square(slope / np.maximum(rho_se, 1e-300))
        c_new = _project(c_new, weights, d.x0_star, d.x1_star)
        # the frozen residual is piecewise constant; halve the step of a level
        # whose movement reverses so it settles instead of flipping
        move = c_new - c
        if it >= SETTLE_AFTER:
            relax = np.where(move * last_move < 0, 0.5 * relax, relax)
        last_move = np.where(move != 0, move, last_move)
        c_se = rho_se / slope

        b_new = c_to_b_inv(MonotoneBoundary(zs, c_new, "c", left=d.x0_star, right=d.x1_star), xs, p, cfg.clamp_hi).values
        change = float(np.max(np.abs(b_new - b_old)))
        clog.sup_change.append(change)
        clog.level_change.append(float(np.max(np.abs(c_new - c))))
        clog.mean_std_error.append(float(np.mean(base[:, 3])))
        clog.iterations = it + 1
        log.debug("sweep %d: sup|db_inv|=%.3g max|dc|=%.3g", it, change, clog.level_change[-1])
        c, b_old = c_new, b_new
        if change < cfg.tol:
            clog.converged = True
            break
    if clog.mean_std_error and clog.mean_std_error[-1] > cfg.tol:
        clog.warnings.append(
            f"mean Monte Carlo std error {clog.mean_std_error[-1]:.3g} exceeds tol {cfg.tol:g}")
    if not clog.converged:
        clog.warnings.append(f"no convergence within {cfg.max_iter} sweeps")

    c_b = MonotoneBoundary(zs, c, "c", cfg.clamp_hi, left=d.x0_star, right=d.x1_star)
    b_inv = c_to_b_inv(c_b, xs, p, cfg.clamp_hi)
    return BoundarySolution(b_inv, c_b, c_se, clog, p, d)


def _b_inv_on_levels(b_inv: MonotoneBoundary, zs, p, d):
    """Height of a b_inv boundary on each z level (its c representation)."""
    c = boundary_transforms(b_inv, p)["c"]
    if c is None:
        return np.full(zs.size, 0.5 * (d.x0_star + d.x1_star))
    return c(zs)


def solve_boundary(p: ModelParams, cfg: Optional[SolverConfig] = None, threads: int = 1):
    """Solve and return ``(b_inv, convergence_log)``."""
    sol = solve(p, cfg, threads)
    return sol.b_inv, sol.log


class BoundarySolver(BaseEstimator):
    """Estimator wrapper: ``fit(params)`` solves, ``predict(phi)`` returns b(phi)."""

    def __init__(self, grid_size=50, mc_samples=100_000, tol=1e-2, max_iter=50,
                 damping=1.0, clamp_hi=1e6, crn=True, seed=0, threads=1):
        self.grid_size = grid_size
        self.mc_samples = mc_samples
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.clamp_hi = clamp_hi
        self.crn = crn
        self.seed = seed
        self.threads = threads

    def _config(self):
        return SolverConfig(grid_size=self.grid_size, mc_samples=self.mc_samples, tol=self.tol,
                            max_iter=self.max_iter, damping=self.damping,
                            clamp_hi=self.clamp_hi, crn=self.crn, seed=self.seed)

    def fit(self, params, y=None):
        if not isinstance(params, ModelParams):
            raise InvalidInputError("fit expects ModelParams")
        self.solution_ = solve(params, self._config(), self.threads)
        self.b_inv_ = self.solution_.b_inv
        self.c_ = self.solution_.c
        self.convergence_ = self.solution_.log
        self.transforms_ = self.solution_.transforms()
        return self

    def _check(self):
        if not hasattr(self, "solution_"):
            raise NotFittedError("BoundarySolver is not fitted yet; call fit first")

    def predict(self, phi):
        """Critical log-price for likelihood ratio(s) ``phi``."""
        self._check()
        phi = np.asarray(phi, dtype=float)
        if np.any(~(phi >= 0)):
            raise InvalidInputError("likelihood ratio must be non-negative")
        return self.transforms_["b"](phi)

    def predict_belief(self, pi):
        """Critical log-price for belief(s) ``pi``."""
        self._check()
        return b_to_a(self.transforms_["b"], pi)
