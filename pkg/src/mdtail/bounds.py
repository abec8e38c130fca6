"""Certified analytic tail bounds and rate brackets.

Everything here is closed-form arithmetic (plus a handful of quadrature
moments), so a bracket can be evaluated at astronomically large n, where the
counterexample regime first becomes visible, without any sampling.

Upper bound on p: the optimized-at-lambda=x Chernoff/Markov bound
exp(-n*x^2) * phi(x)^n, evaluated in log space.  Lower bound on p:
Mogulskii's inequality

    P(mean in A) * (1 - e^(-M)) + e^(-M) >= exp(-n*D(Q||P) - M*p_n),

instantiated with A = [x, inf) and an auxiliary measure Q that overshoots
the threshold (either the exponential tilt with mean (1+eps)*x, or the
counterexample law), with p_n = Q(mean < x) controlled by Cantelli's
one-sided inequality.  A RateBracket packages the two as bounds on the
finite-n rate -log(p)/(n*x^2); the upper bound on the rate comes from the
lower bound on p and vice versa.

Classical inequalities (Bernstein, Cantelli) are exposed as standalone
utilities in their textbook forms.  An exact discrete-convolution oracle
backs the Mogulskii verification on small instances.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .directions import AlternativeModel
from .errors import DomainError, ParameterError, SupportError
from .quadrature import (
    DEFAULT_SPEC,
    NormalizingConstants,
    QuadratureSpec,
    kl_exponential_tilt,
    mgf,
    mgf_boundary,
    tilted_variance,
)
from .tilting import CounterexampleTilt, counterexample_kl, counterexample_moments, solve_tilt
from .errors import TiltRangeError


# --- elementary pieces --------------------------------------------------------


def h_function(y):
    """h(y) = 2*(y - log(1+y))/y^2 on (-1, inf), h(0) = 1; positive, decreasing.

    The removable singularity at 0 is handled by the Taylor series for
    |y| < 1e-4 (truncation error below 1e-17 there).
    """
    arr = np.asarray(y, dtype=float)
    if np.any(arr <= -1.0):
        raise DomainError(f"h is defined on (-1, inf), got {y!r}")
    small = np.abs(arr) < 1e-4
    z = np.where(small, 0.0, arr)
    series = 1.0 - 2.0 * arr / 3.0 + arr * arr / 2.0 - 2.0 * arr ** 3 / 5.0
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = 2.0 * (z - np.log1p(z)) / np.where(small, 1.0, z * z)
    out = np.where(small, series, direct)
    if np.ndim(y) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class LogInequalityReport:
    """Grid check of the two-sided quadratic log bound on [-eps, eps]."""

    epsilon: float
    holds: bool
    max_lower_violation: float  # positive means the lower bound failed somewhere
    max_upper_violation: float
    min_lower_slack: float
    min_upper_slack: float
    points: int


def check_log_inequality(epsilon: float, grid=None) -> LogInequalityReport:
    """Verify y - (3-eps)/(6(1-eps))*y^2 <= log(1+y) <= y - (3-2eps)/6*y^2 on a grid.

    A violation is reported, not raised: the inequality is proved, so a
    failure would indicate an implementation bug.
    """
    if not (0.0 < epsilon < 1.0):
        raise ParameterError(f"epsilon must be in (0,1), got {epsilon}")
    if grid is None:
        grid = np.linspace(-epsilon, epsilon, 10001)
    y = np.asarray(grid, dtype=float)
    if np.any(np.abs(y) > epsilon * (1.0 + 1e-12)):
        raise ParameterError("grid points must lie in [-eps, eps]")
    log_term = np.log1p(y)
    lower = y - (3.0 - epsilon) / (6.0 * (1.0 - epsilon)) * y * y
    upper = y - (3.0 - 2.0 * epsilon) / 6.0 * y * y
    lower_slack = log_term - lower
    upper_slack = upper - log_term
    return LogInequalityReport(
        epsilon=epsilon,
        holds=bool(np.all(lower_slack >= -1e-15) and np.all(upper_slack >= -1e-15)),
        max_lower_violation=float(np.maximum(-lower_slack, 0.0).max()),
        max_upper_violation=float(np.maximum(-upper_slack, 0.0).max()),
        min_lower_slack=float(lower_slack.min()),
        min_upper_slack=float(upper_slack.min()),
        points=int(y.size),
    )


def bernstein_bound(n: float, variance: float, sup_bound: float, s: float) -> float:
    """Classical two-sided Bernstein bound 2*exp(-s^2 / (2*(n*variance + sup_bound*s/3))).

    s is the deviation of the sum of n centered variables with the given
    per-term variance and a.s. bound.  Vacuous (=2) at s=0; callers clamp.
    """
    if n <= 0 or variance <= 0 or sup_bound <= 0 or s < 0:
        raise ParameterError("bernstein_bound requires positive n, variance, sup_bound and s >= 0")
    return 2.0 * math.exp(-(s * s) / (2.0 * (n * variance + sup_bound * s / 3.0)))


def cantelli_bound(n: float, variance: float, deviation: float) -> float:
    """One-sided Cantelli bound n*v / (n*v + d^2) on P(sum of n centered terms < -d)."""
    if variance <= 0.0 or n <= 0:
        raise ParameterError("cantelli_bound requires positive n and variance")
    if deviation < 0.0:
        raise ParameterError(f"deviation must be >= 0, got {deviation}")
    if deviation == 0.0:
        return 1.0
    # Ratio form avoids overflow when n or the deviation is astronomically large.
    ratio = (deviation / n) * (deviation / variance)
    return 1.0 / (1.0 + ratio)


def chernoff_upper(
    model: AlternativeModel,
    constants: NormalizingConstants,
    n: float,
    x: float,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> float:
    """Markov/Chernoff bound exp(-n*x^2) * phi(x)^n, valid for every n.

    Raises DomainError when x is past the mgf boundary: there the bound does
    not exist (the mgf is infinite).
    """
    if x < 0.0:
        raise ParameterError(f"x must be >= 0, got {x}")
    if x >= mgf_boundary(model, constants):
        raise DomainError(f"x={x:g} is outside the mgf domain; Chernoff bound unavailable")
    log_phi = math.log(mgf(model, constants, x, spec))
    return math.exp(n * (log_phi - x * x))


# --- exact discrete substrate for Mogulskii ----------------------------------


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite distribution given as ((value, probability), ...)."""

    atoms: tuple

    def __post_init__(self):
        if not self.atoms:
            raise ParameterError("empty distribution")
        probs = [p for _, p in self.atoms]
        if any(p <= 0.0 for p in probs):
            raise ParameterError("atom probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ParameterError(f"probabilities sum to {math.fsum(probs)!r}, not 1")

    @property
    def values(self) -> np.ndarray:
        return np.array([v for v, _ in self.atoms], dtype=float)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], dtype=float)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def tilt(self, lam: float) -> "DiscreteDistribution":
        """Exponential tilt: probabilities proportional to p*exp(lam*v)."""
        w = self.probs * np.exp(lam * (self.values - self.values.max()))
        w = w / w.sum()
        return DiscreteDistribution(tuple(zip(self.values.tolist(), w.tolist())))

    def convolve(self, n: int, cost_cap: int = 10 ** 7) -> dict:
        """Exact law of the n-fold sum as {sum_value: probability} (dynamic program)."""
        if n < 1:
            raise ParameterError(f"n must be >= 1, got {n}")
        sums = {0.0: 1.0}
        for _ in range(n):
            if len(sums) * len(self.atoms) * n > cost_cap:
                raise ParameterError(
                    f"exact convolution cost cap exceeded ({len(sums)} sums x "
                    f"{len(self.atoms)} atoms x n={n})"
                )
            nxt = {}
            for s, ps in sums.items():
                for v, pv in self.atoms:
                    key = s + v
                    nxt[key] = nxt.get(key, 0.0) + ps * pv
            sums = nxt
        return sums


def kl_discrete(q: DiscreteDistribution, p: DiscreteDistribution) -> float:
    """KL divergence D(Q||P); Q's support must be contained in P's."""
    pmap = {v: pr for v, pr in p.atoms}
    total = 0.0
    for v, qv in q.atoms:
        if v not in pmap:
            raise SupportError(f"Q atom {v!r} is outside P's support")
        total += qv * math.log(qv / pmap[v])
    return total


@dataclass(frozen=True)
class MogulskiiCheck:
    lhs: float
    rhs: float
    holds: bool
    p_event: float  # P(sum/n in A)
    p_n: float  # Q(sum in n*A^c)
    kl: float


def mogulskii_lower(
    p_dist: DiscreteDistribution,
    q_dist: DiscreteDistribution,
    x: float,
    big_m: float,
    n: int,
    cost_cap: int = 10 ** 7,
) -> MogulskiiCheck:
    """Evaluate both sides of Mogulskii's inequality exactly with A = [x, inf).

        P(mean in A)*(1 - e^(-M)) + e^(-M) >= exp(-n*D(Q||P) - M*p_n)

    with p_n = Q(sum < n*x).  x = -inf is allowed (A = whole line).  Both
    tail probabilities come from the exact convolution oracle.
    """
    kl = kl_discrete(q_dist, p_dist)
    threshold = n * x
    p_sums = p_dist.convolve(n, cost_cap)
    p_event = math.fsum(pr for s, pr in p_sums.items() if s >= threshold)
    q_sums = q_dist.convolve(n, cost_cap)
    p_n = math.fsum(pr for s, pr in q_sums.items() if s < threshold)
    lhs = p_event * (1.0 - math.exp(-big_m)) + math.exp(-big_m)
    rhs = math.exp(-n * kl - big_m * p_n)
    holds = lhs >= rhs * (1.0 - 1e-12)
    return MogulskiiCheck(lhs=lhs, rhs=rhs, holds=holds, p_event=p_event, p_n=p_n, kl=kl)


# --- certified rate bracket ---------------------------------------------------

_EPS_GRID = (0.05, 0.07, 0.1, 0.15, 0.2, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 3.0)


@dataclass(frozen=True)
class RateBracket:
    """Certified interval for the finite-n rate -log(p)/(n*x^2).

    n may be any (huge) real: evaluation is pure arithmetic in ratio form,
    which is the honest way to exhibit the counterexample limit, since it
    only manifests at absurdly large n.  lower_rate falls back to the
    trivial 0 when the Chernoff side is unavailable (x past the mgf
    boundary); upper_rate is +inf when the Mogulskii side is vacuous.
    """

    n: float
    x: float
    upper_rate: float
    lower_rate: float
    kl: float
    p_n_bound: float
    big_m: float
    regime: str
    chernoff_available: bool = True
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if (
            math.isfinite(self.upper_rate)
            and math.isfinite(self.lower_rate)
            and self.lower_rate > self.upper_rate + 1e-12
        ):
            raise DomainError(
                f"bracket inverted: lower_rate={self.lower_rate} > upper_rate={self.upper_rate}"
            )


def _abs_log1p_mexp(t: float) -> float:
    """|log(1 - e^(-t))| for t > 0, exactly 0 once e^(-t) underflows."""
    if t > 745.0:
        return 0.0
    return abs(math.log1p(-math.exp(-t)))


def _mogulskii_rate_terms(nx2: float, kl_over_x2: float, p_n: float, m_factor: float):
    """Assemble the upper-rate terms; returns +inf when the bound is vacuous."""
    gap_ratio = m_factor - kl_over_x2 - m_factor * p_n
    if gap_ratio <= 0.0 or nx2 <= 0.0:
        return math.inf
    log_terms = _abs_log1p_mexp(m_factor * nx2) + _abs_log1p_mexp(gap_ratio * nx2)
    return kl_over_x2 + m_factor * p_n + log_terms / nx2


def certified_rate_bracket(
    model: AlternativeModel,
    constants: NormalizingConstants,
    n: float,
    x: float,
    ct: Optional[CounterexampleTilt] = None,
    m_rule: str = "auto",
    eps_grid: Sequence[float] = _EPS_GRID,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> RateBracket:
    """Bracket the finite-n rate by pure bound arithmetic.

    Exponential-tilt path (default): for each overshoot eps on the grid,
    tilt to mean (1+eps)*x, take D = KL of the tilt, bound p_n by Cantelli
    with the tilted variance, set M = 2*n*x^2, and keep the smallest valid
    upper rate (each eps yields a certified bound, so the minimum is one).

    Counterexample path (ct given): D is the exact piecewise KL, the Q
    moments of Y come from quadrature, and M = n*x^2.
    """
    if x <= 0.0:
        raise ParameterError(f"rate bracket requires x > 0, got {x}")
    if n <= 0.0:
        raise ParameterError(f"rate bracket requires n > 0, got {n}")
    nx2 = n * x * x
    x2 = x * x

    if ct is not None:
        m_factor = 1.0 if m_rule in ("auto", "thm3") else 2.0
        kl = counterexample_kl(ct)
        q_mean, q_second = counterexample_moments(ct, model, constants, spec)
        if q_mean > x:
            p_n = cantelli_bound(n, q_second, n * (q_mean - x))
        else:
            p_n = 1.0  # Q does not clear the threshold; Mogulskii still valid, just loose
        upper = _mogulskii_rate_terms(nx2, kl / x2, p_n, m_factor)
        regime = "thm3"
        details = {"q_mean": q_mean, "q_second_moment": q_second, "kappa": ct.kappa}
    else:
        m_factor = 2.0 if m_rule in ("auto", "thm2") else 1.0
        upper = math.inf
        kl = math.nan
        p_n = math.nan
        details = {}
        for eps in eps_grid:
            try:
                lam = solve_tilt(model, constants, (1.0 + eps) * x, spec=spec)
                d_eps = kl_exponential_tilt(model, constants, lam, spec)
                rho2 = tilted_variance(model, constants, lam, spec)
            except (TiltRangeError, DomainError):
                continue
            p_eps = cantelli_bound(n, rho2, eps * n * x)
            cand = _mogulskii_rate_terms(nx2, d_eps / x2, p_eps, m_factor)
            if cand < upper:
                upper = cand
                kl = d_eps
                p_n = p_eps
                details = {"eps": eps, "lambda": lam, "tilted_variance": rho2}
        regime = "thm2"

    boundary = mgf_boundary(model, constants)
    if x < boundary:
        log_phi = math.log(mgf(model, constants, x, spec))
        lower = 1.0 - log_phi / x2
        chernoff_ok = True
    else:
        lower = 0.0  # trivial bound p <= 1; Chernoff unavailable past the mgf boundary
        chernoff_ok = False

    return RateBracket(
        n=float(n),
        x=x,
        upper_rate=upper,
        lower_rate=lower,
        kl=kl,
        p_n_bound=p_n,
        big_m=m_factor * nx2,
        regime=regime,
        chernoff_available=chernoff_ok,
        details=details,
    )


def thm3_schedule(k_values: Sequence[int]):
    """The witness schedule x = 10^(-k/2), theta = x^5, n = theta^(-4)."""
    out = []
    for k in k_values:
        x = 10.0 ** (-k / 2.0)
        theta = x ** 5
        n = theta ** -4.0
        out.append((k, x, theta, n))
    return out
