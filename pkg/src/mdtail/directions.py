"""Perturbation directions for local alternatives to uniformity on (0,1).

A direction is a fixed function a in L2(0,1) with

    int_0^1 a(t) dt = 0   and   int_0^1 a^2(t) dt = 1,

and the local alternative with amplitude theta has density 1 + theta*a(t).
Built-in directions:

* ``ar:<r>``  unbounded family  (sqrt(1-2r)/r) * ((1-r)*t^(-r) - 1),
  0 < r < 1/2.  Lies in L_q exactly for q < 1/r, with a power singularity
  of exponent r at t=0.
* ``step``    +1 on (0,1/2), -1 on (1/2,1).  The standardized log-likelihood
  variable is exactly two-point +-1, so every downstream quantity has a
  closed form (cosh/tanh/atanh).
* ``cosine``  sqrt(2)*cos(2*pi*t), with the closed form
  int log(1 + b*cos(2*pi*t)) dt = log((1 + sqrt(1-b^2))/2).

Directions expose analytic metadata (integrability exponent, singularity,
essential infimum) instead of letting downstream code infer it numerically:
the mgf finiteness boundary and the quadrature substitutions need the exact
exponents.  Evaluation is pure; instances are immutable and safe to share.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InvalidModelError, ParameterError


@dataclass(frozen=True)
class Singularity:
    """Power-law endpoint singularity: f(t) ~ C * |t - location|^(-exponent)."""

    location: float
    exponent: float

    def scaled(self, factor: float, cap: float = 0.999) -> "Singularity":
        """Effective singularity of f raised to the power ``factor``.

        The exponent is capped strictly below 1 so a declared singularity
        always stays formally integrable for the substitution machinery.
        """
        return Singularity(self.location, min(self.exponent * float(factor), cap))


@dataclass(frozen=True, eq=False)
class Direction:
    """A mean-zero, unit-norm perturbation with analytic metadata.

    ``fn`` must accept scalars and numpy arrays of points in (0,1).
    ``bound`` is sup|a| for bounded directions, None otherwise.
    ``integrability_sup`` is sup{q : a in L_q} (math.inf when bounded).
    ``breakpoints`` lists interior discontinuities for the quadrature layer.
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    bound: Optional[float]
    integrability_sup: float
    singularity: Optional[Singularity]
    essential_min: float
    breakpoints: tuple = field(default=())

    def __call__(self, t):
        return self.fn(t)


@dataclass(frozen=True, eq=False)
class AlternativeModel:
    """A direction plus amplitude theta, defining the density 1 + theta*a."""

    direction: Direction
    theta: float

    def __post_init__(self):
        if not (self.theta > 0.0 and math.isfinite(self.theta)):
            raise ParameterError(f"theta must be positive and finite, got {self.theta}")

    def density(self, t):
        """Evaluate 1 + theta*a(t)."""
        return 1.0 + self.theta * self.direction.fn(t)


def eval_direction(direction: Direction, t):
    """Evaluate a(t) for t in the open interval (0,1).

    Accepts scalars or arrays; any point outside (0,1) raises DomainError.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError(f"direction argument must lie in (0,1), got {t!r}")
    out = direction.fn(arr)
    if np.ndim(t) == 0:
        return float(out)
    return out


def make_ar(r: float) -> Direction:
    """The unbounded direction (sqrt(1-2r)/r) * ((1-r)*t^(-r) - 1).

    Normalization holds exactly: int t^(-r) = 1/(1-r) kills the mean, and
    int ((1-r)t^(-r) - 1)^2 = r^2/(1-2r) cancels the prefactor.  Requires
    0 < r < 1/2 (square integrability of t^(-r)).
    """
    if not (0.0 < r < 0.5):
        raise ParameterError(f"a_r requires r in (0, 1/2), got {r}")
    coef = math.sqrt(1.0 - 2.0 * r) / r
    lead = 1.0 - r

    def fn(t, _coef=coef, _lead=lead, _r=r):
        t = np.asarray(t, dtype=float)
        return _coef * (_lead * np.power(t, -_r) - 1.0)

    return Direction(
        name=f"ar:{r:g}",
        fn=fn,
        bound=None,
        integrability_sup=1.0 / r,
        singularity=Singularity(location=0.0, exponent=r),
        essential_min=-math.sqrt(1.0 - 2.0 * r),  # attained at t=1
    )


def make_step() -> Direction:
    """Bounded two-level fixture: +1 on (0,1/2), -1 on (1/2,1).

    Both normalization integrals hold exactly, and the standardized variable
    of the log-likelihood statistic is exactly +-1 with equal mass, giving
    cosh(lambda) as the closed-form mgf for every amplitude.
    """

    def fn(t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 0.5, 1.0, -1.0)

    return Direction(
        name="step",
        fn=fn,
        bound=1.0,
        integrability_sup=math.inf,
        singularity=None,
        essential_min=-1.0,
        breakpoints=(0.5,),
    )


def make_cosine() -> Direction:
    """Bounded smooth fixture sqrt(2)*cos(2*pi*t).

    Closed form available downstream:
    int_0^1 log(1 + b*cos(2*pi*t)) dt = log((1 + sqrt(1 - b^2))/2), |b| < 1.
    """
    root2 = math.sqrt(2.0)

    def fn(t, _c=root2):
        t = np.asarray(t, dtype=float)
        return _c * np.cos(2.0 * np.pi * t)

    return Direction(
        name="cosine",
        fn=fn,
        bound=root2,
        integrability_sup=math.inf,
        singularity=None,
        essential_min=-root2,
    )


def validate_model(direction: Direction, theta: float) -> AlternativeModel:
    """Build the local alternative with amplitude theta, checking positivity.

    The density 1 + theta*a is valid iff 1 + theta*essential_min > 0.  theta=0
    is rejected: the statistic's normalization degenerates (sigma0n = 0).
    """
    if not (theta > 0.0 and math.isfinite(theta)):
        raise ParameterError(f"theta must be positive and finite, got {theta}")
    margin = 1.0 + theta * direction.essential_min
    if margin <= 0.0:
        raise InvalidModelError(
            f"density 1 + theta*a is nonpositive: essential infimum "
            f"{margin:.6g} <= 0 for direction {direction.name!r}, theta={theta:g}",
            margin=margin,
        )
    return AlternativeModel(direction=direction, theta=theta)


@dataclass(frozen=True)
class NormalizationReport:
    """Quadrature check of the mean-zero / unit-norm conditions."""

    mean: float
    mean_err: float
    second_moment: float
    second_err: float
    tol: float

    @property
    def mean_ok(self) -> bool:
        return abs(self.mean) <= self.tol

    @property
    def norm_ok(self) -> bool:
        return abs(self.second_moment - 1.0) <= self.tol

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.norm_ok


def verify_normalization(direction: Direction, tol: float) -> NormalizationReport:
    """Check int a = 0 and int a^2 = 1 by quadrature against ``tol``."""
    if not tol > 0.0:
        raise ParameterError(f"tol must be positive, got {tol}")
    # Imported here: quadrature depends on this module for the metadata types.
    from .quadrature import DEFAULT_SPEC, integrate_unit

    sing = direction.singularity
    mean, mean_err = integrate_unit(
        direction.fn, DEFAULT_SPEC, singularity=sing, breakpoints=direction.breakpoints
    )

    def sq(t):
        v = direction.fn(t)
        return v * v

    second, second_err = integrate_unit(
        sq,
        DEFAULT_SPEC,
        singularity=sing.scaled(2.0) if sing is not None else None,
        breakpoints=direction.breakpoints,
    )
    return NormalizationReport(
        mean=mean, mean_err=mean_err, second_moment=second, second_err=second_err, tol=tol
    )


def parse_direction(spec: str) -> Direction:
    """Resolve a direction from its config string: 'ar:<r>', 'step', 'cosine'."""
    text = spec.strip().lower()
    if text == "step":
        return make_step()
    if text == "cosine":
        return make_cosine()
    if text.startswith("ar:"):
        try:
            r = float(text[3:])
        except ValueError:
            raise ParameterError(f"cannot parse a_r parameter in direction spec {spec!r}")
        return make_ar(r)
    raise ParameterError(f"unknown direction spec {spec!r} (want 'ar:<r>', 'step', or 'cosine')")
