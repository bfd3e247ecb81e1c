"""Model parameters, admissibility checks and coordinate maps.

The hidden drift of the log-price takes one of two values ``mu0 < mu1``;
``pi0`` is the prior probability of ``mu1``.  Three coordinate systems are
used throughout the package:

* belief ``pi`` in (0, 1),
* likelihood ratio ``phi = pi / (1 - pi)`` in (0, inf),
* parabolic coordinate ``z = (sigma / gamma) * log(phi) - x``, which moves
  deterministically in time.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
import math
from typing import List

import numpy as np


class InvalidInputError(ValueError):
    """Raised for malformed or out-of-domain numeric input."""


class AssumptionViolationError(ValueError):
    """Raised when parameters leave the admissible region."""


@dataclass(frozen=True)
class ModelParams:
    mu0: float
    mu1: float
    sigma: float
    r: float
    kappa: float
    alpha: float
    pi0: float

    @classmethod
    def from_betas(cls, beta0, beta1, sigma, r, kappa, alpha, pi0):
        """Build from arithmetic price drifts, ``mu = beta - sigma**2 / 2``."""
        half = 0.5 * sigma * sigma
        return cls(beta0 - half, beta1 - half, sigma, r, kappa, alpha, pi0)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        names = ("mu0", "mu1", "sigma", "r", "kappa", "alpha", "pi0")
        if "beta0" in d or "beta1" in d:
            need = ("beta0", "beta1", "sigma", "r", "kappa", "alpha", "pi0")
            missing = [k for k in need if k not in d]
            if missing:
                raise InvalidInputError(f"missing parameter(s): {missing}")
            return cls.from_betas(*(float(d[k]) for k in need))
        missing = [k for k in names if k not in d]
        if missing:
            raise InvalidInputError(f"missing parameter(s): {missing}")
        try:
            return cls(*(float(d[k]) for k in names))
        except (TypeError, ValueError) as exc:
            raise InvalidInputError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "ModelParams":
        d = self.to_dict()
        d.update(changes)
        return ModelParams(**d)


@dataclass(frozen=True)
class DerivedQuantities:
    gamma: float
    n0: float
    n1: float
    x0_star: float
    x1_star: float


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    slack: float


@dataclass
class ValidationReport:
    checks: List[Check] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "checks": [asdict(c) for c in self.checks],
        }

    def __str__(self) -> str:
        lines = []
        for c in self.checks:
            flag = "PASS" if c.passed else "FAIL"
            lines.append(f"{flag}  {c.name:<28s} slack={c.slack:+.6g}")
        lines.append("verdict: " + ("admissible" if self.ok else "NOT admissible"))
        return "\n".join(lines)


def well_posedness_bounds(p: ModelParams) -> tuple:
    """The three lower bounds the discount rate must exceed."""
    s2 = p.sigma * p.sigma
    gamma = (p.mu1 - p.mu0) / p.sigma
    b1 = p.mu1 + 0.5 * s2
    b2 = b1 + (2.0 * p.mu1 + s2) * (p.mu1 - p.mu0) / s2
    b3 = (gamma / (2.0 * p.sigma)) * abs(p.mu0 + p.mu1)
    return b1, b2, b3


def validate_params(p: ModelParams) -> ValidationReport:
    vals = [p.mu0, p.mu1, p.sigma, p.r, p.kappa, p.alpha, p.pi0]
    if not all(math.isfinite(v) for v in vals):
        raise InvalidInputError("non-finite model parameter")

    rep = ValidationReport()
    add = rep.checks.append
    add(Check("sigma > 0", p.sigma > 0, p.sigma))
    add(Check("r > 0", p.r > 0, p.r))
    add(Check("kappa > 0", p.kappa > 0, p.kappa))
    add(Check("alpha > 0", p.alpha > 0, p.alpha))
    add(Check("0 < pi0 < 1", 0 < p.pi0 < 1, min(p.pi0, 1 - p.pi0)))
    add(Check("mu0 < mu1", p.mu0 < p.mu1, p.mu1 - p.mu0))
    add(Check("mu0 < 0", p.mu0 < 0, -p.mu0))
    if p.sigma > 0:
        b1, b2, b3 = well_posedness_bounds(p)
        add(Check("r > mu1 + sigma^2/2", p.r > b1, p.r - b1))
        add(Check("r > learning bound", p.r > b2, p.r - b2))
        add(Check("r > drift asymmetry bound", p.r > b3, p.r - b3))
    return rep


def require_admissible(p: ModelParams) -> ValidationReport:
    rep = validate_params(p)
    if not rep.ok:
        raise AssumptionViolationError("inadmissible parameters: " + ", ".join(rep.failed()))
    return rep


def positive_root(mu: float, sigma: float, r: float) -> float:
    """Positive root of ``sigma**2/2 n**2 + mu n - r = 0``, cancellation free."""
    a = 0.5 * sigma * sigma
    disc = math.sqrt(mu * mu + 4.0 * a * r)
    if mu >= 0:
        return 2.0 * r / (mu + disc)
    return (-mu + disc) / (2.0 * a)


def threshold(n: float, kappa: float) -> float:
    return math.log(kappa * n / (n - 1.0))


def derive(p: ModelParams) -> DerivedQuantities:
    require_admissible(p)
    n0 = positive_root(p.mu0, p.sigma, p.r)
    n1 = positive_root(p.mu1, p.sigma, p.r)
    if n0 <= 1 or n1 <= 1:
        raise AssumptionViolationError("quadratic root <= 1; threshold undefined")
    return DerivedQuantities(
        gamma=(p.mu1 - p.mu0) / p.sigma,
        n0=n0,
        n1=n1,
        x0_star=threshold(n0, p.kappa),
        x1_star=threshold(n1, p.kappa),
    )


def belief_likelihood(value, direction: str):
    """Map belief to likelihood ratio (``to_phi``) or back (``to_pi``)."""
    v = np.asarray(value, dtype=float)
    if direction == "to_phi":
        if np.any(~(v > 0)) or np.any(~(v < 1)):
            raise InvalidInputError("belief must lie in (0, 1)")
        out = v / (1.0 - v)
    elif direction == "to_pi":
        if np.any(~(v > 0)) or np.any(~np.isfinite(v)):
            raise InvalidInputError("likelihood ratio must lie in (0, inf)")
        out = v / (1.0 + v)
    else:
        raise InvalidInputError(f"unknown direction {direction!r}")
    return out if out.ndim else float(out)


def parabolic(x, second, direction: str, p: ModelParams):
    """``to_z``: (x, phi) -> z.  ``to_phi``: (x, z) -> phi."""
    gamma = (p.mu1 - p.mu0) / p.sigma
    ratio = p.sigma / gamma
    x = np.asarray(x, dtype=float)
    second = np.asarray(second, dtype=float)
    if direction == "to_z":
        if np.any(~(second > 0)):
            raise InvalidInputError("likelihood ratio must be positive")
        out = ratio * np.log(second) - x
    elif direction == "to_phi":
        out = np.exp((x + second) / ratio)
    else:
        raise InvalidInputError(f"unknown direction {direction!r}")
    return out if out.ndim else float(out)
