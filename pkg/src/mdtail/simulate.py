"""Tail-probability estimation for the normalized log-likelihood-ratio statistic.

The statistic for a sample t_1..t_n from the unit interval is

    V_n = (1/(sqrt(n)*sigma0n)) * sum_i (log(1 + theta*a(t_i)) - e0n),

and the estimated quantity is p = P(V_n >= sqrt(n)*x) under uniformity,
together with the finite-n rate -log(p) / (n*x^2).

Estimators: plain Monte Carlo, importance sampling under the exponential
tilt (unbiased, with the likelihood ratio phi^n * exp(-lambda*sum Y) handled
entirely in log space; weights span hundreds of orders of magnitude already
at n*x^2 ~ 40), and importance sampling under the counterexample law with
per-draw weight 1/g(t).

Reproducibility contract: one replication = one full n-sample; replications
are partitioned into fixed-size blocks (size depends only on n), each block
draws from a keyed substream addressed by its block index, and block results
are merged in block order.  Worker count therefore cannot change any output
bit.  Zero-hit outcomes are reported with a one-sided rule-of-three interval
instead of a bare infinite rate.
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .directions import AlternativeModel, Direction, validate_model
from .errors import ConfigError, DomainError, InvalidModelError, ParameterError
from .quadrature import (
    DEFAULT_SPEC,
    NormalizingConstants,
    QuadratureSpec,
    compute_constants,
    mgf,
    mgf_boundary,
)
from .streams import RandomStream
from .tilting import (
    CounterexampleTilt,
    ExponentialTilt,
    build_tilt,
    counterexample_inverse_cdf,
    solve_tilt,
)

_BLOCK_TARGET = 1 << 22  # draws per block; fixed so results never depend on workers
_Z90 = 1.6448536269514722  # one-sided 95% normal quantile (90% central interval)


@dataclass(frozen=True, eq=False)
class TailQuery:
    """One tail-probability question: model, sample size, threshold, budget."""

    model: AlternativeModel
    constants: NormalizingConstants
    n: int
    x: float
    mc_budget: int
    stream_key: object = 0

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"n must be >= 1, got {self.n}")
        if self.mc_budget < 1000:
            raise ParameterError(f"mc_budget must be >= 1000, got {self.mc_budget}")
        if not math.isfinite(self.x):
            raise ParameterError(f"x must be finite, got {self.x}")
        # Sanity cap keeps queries in the moderate-deviation regime.
        if self.x > 10.0 * self.constants.sigma0n:
            raise ParameterError(
                f"x={self.x:g} exceeds the sanity cap 10*sigma0n={10 * self.constants.sigma0n:g}"
            )

    @property
    def nx2(self) -> float:
        return self.n * self.x * self.x


@dataclass(frozen=True)
class TailEstimate:
    """Estimate of p = P(V_n >= sqrt(n)*x) with its derived rate."""

    p_hat: float
    std_err: float
    log_p: float
    rate: float
    ci90: tuple
    n_effective: float
    hits: int
    budget: int
    estimator: str
    budget_limited: bool = False
    clamped: bool = False
    degenerate_weights: bool = False


def compute_vn(model: AlternativeModel, constants: NormalizingConstants, sample) -> float:
    """Evaluate V_n on an explicit sample (compensated summation, log1p)."""
    t = np.asarray(sample, dtype=float)
    if t.size == 0:
        raise ParameterError("empty sample")
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise ParameterError("sample points must lie in (0,1)")
    dens = 1.0 + model.theta * model.direction.fn(t)
    if np.any(dens <= 0.0):
        raise InvalidModelError("1 + theta*a(t_i) <= 0 at a sample point", margin=float(dens.min()))
    terms = np.log1p(model.theta * model.direction.fn(t)) - constants.e0n
    total = math.fsum(terms.tolist())
    n = t.size
    return total / (math.sqrt(n) * constants.sigma0n)


def _block_reps(n: int) -> int:
    return max(1, _BLOCK_TARGET // max(n, 1))


def _merge(stats):
    """Fold per-block (reps, hits, max_logw, s1, s2) in block order."""
    reps = 0
    hits = 0
    m = -math.inf
    s1 = 0.0
    s2 = 0.0
    for br, bh, bm, bs1, bs2 in stats:
        reps += br
        hits += bh
        if bh == 0:
            continue
        if bm > m:
            if m > -math.inf:
                scale = math.exp(m - bm)
                s1 *= scale
                s2 *= scale * scale
            m = bm
            s1 += bs1
            s2 += bs2
        else:
            scale = math.exp(bm - m)
            s1 += bs1 * scale
            s2 += bs2 * scale * scale
    return reps, hits, m, s1, s2


def _rate_interval(p_lo, p_hi, nx2):
    lo = -math.log(p_hi) / nx2 if p_hi > 0.0 else math.inf
    hi = -math.log(p_lo) / nx2 if p_lo > 0.0 else math.inf
    return (lo, hi)


def _finalize(query, hits, m, s1, s2, estimator, weighted):
    budget = query.mc_budget
    nx2 = query.nx2
    if hits == 0:
        # Rule of three: with zero hits, p <= 3/B at ~95% confidence.
        p_hi = 3.0 / budget
        ci = _rate_interval(0.0, p_hi, nx2) if nx2 > 0 else (math.nan, math.nan)
        return TailEstimate(
            p_hat=0.0,
            std_err=0.0,
            log_p=-math.inf,
            rate=math.inf,
            ci90=ci,
            n_effective=0.0,
            hits=0,
            budget=budget,
            estimator=estimator,
            budget_limited=True,
        )
    if weighted:
        log_p = m + math.log(s1) - math.log(budget)
        p_hat = math.exp(log_p)
        mean2 = math.exp(2.0 * m) * s2 / budget
        var = max(mean2 - p_hat * p_hat, 0.0) / max(budget - 1, 1)
        std_err = math.sqrt(var)
    else:
        p_hat = hits / budget
        log_p = math.log(p_hat)
        std_err = math.sqrt(p_hat * (1.0 - p_hat) / budget)
    n_eff = (s1 * s1 / s2) if s2 > 0.0 else 0.0
    rate = (-log_p / nx2) if nx2 > 0 else math.nan
    p_lo = max(p_hat - _Z90 * std_err, 0.0)
    p_hi = min(p_hat + _Z90 * std_err, 1.0)
    ci = _rate_interval(p_lo, p_hi, nx2) if nx2 > 0 else (math.nan, math.nan)
    clamped = (p_hat - 3.0 * std_err < 0.0) or (p_hat + 3.0 * std_err > 1.0)
    return TailEstimate(
        p_hat=p_hat,
        std_err=std_err,
        log_p=log_p,
        rate=rate,
        ci90=ci,
        n_effective=n_eff,
        hits=hits,
        budget=budget,
        estimator=estimator,
        budget_limited=False,
        clamped=clamped,
        degenerate_weights=weighted and n_eff < 10.0,
    )


def _run_blocks(query, block_fn, workers):
    n = query.n
    budget = query.mc_budget
    per_block = _block_reps(n)
    nblocks = (budget + per_block - 1) // per_block
    stream = RandomStream(query.stream_key)

    def run(b):
        reps = min(per_block, budget - b * per_block)
        u = stream.substream(b).generator().random((reps, n))
        return block_fn(u, reps)

    if workers <= 1:
        stats = [run(b) for b in range(nblocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            stats = list(ex.map(run, range(nblocks)))
    return _merge(stats)


def _y_sums(query, t):
    """Row sums of Y over a block of samples (pairwise summation)."""
    model = query.model
    c = query.constants
    y = (np.log1p(model.theta * model.direction.fn(t)) - c.e0n) / c.sigma0n
    return y.sum(axis=1)


def direct_mc_tail(query: TailQuery, workers: int = 1) -> TailEstimate:
    """Plain Monte Carlo: fraction of replications with V_n >= sqrt(n)*x."""
    threshold = query.n * query.x

    def block(u, reps):
        s = _y_sums(query, u)
        hits = int(np.count_nonzero(s >= threshold))
        return reps, hits, 0.0, float(hits), float(hits)

    reps, hits, m, s1, s2 = _run_blocks(query, block, workers)
    return _finalize(query, hits, m, s1, s2, estimator="direct", weighted=False)


def is_tail(
    query: TailQuery,
    lam: Optional[float] = None,
    exact_solve: bool = False,
    tilt: Optional[ExponentialTilt] = None,
    grid_size: int = 4096,
    workers: int = 1,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> TailEstimate:
    """Importance sampling under the exponential tilt Q_lambda.

    Unbiased for p with per-replication weight phi(lambda)^n * exp(-lambda *
    sum_i Y_i), computed in log space.  The default tilt is lambda = x (one
    quadrature solve cheaper and first-order optimal); pass exact_solve=True
    to solve m(lambda) = x instead, or lam/tilt explicitly.
    """
    model, constants = query.model, query.constants
    if tilt is not None:
        lam = tilt.lam
    elif lam is None:
        lam = solve_tilt(model, constants, query.x, spec=spec) if exact_solve else query.x
    if lam < 0.0:
        raise ParameterError(f"tilt parameter must be >= 0, got {lam}")
    if lam >= mgf_boundary(model, constants):
        raise DomainError(f"lambda={lam:g} is outside the mgf domain")
    if lam == 0.0:
        # Unit weights: coincides with direct Monte Carlo draw for draw.
        base = direct_mc_tail(query, workers=workers)
        return TailEstimate(**{**base.__dict__, "estimator": "is-exp"})

    if tilt is None:
        tilt = build_tilt(model, constants, lam, grid_size=grid_size, spec=spec)
    log_phi = math.log(tilt.phi)
    n = query.n
    threshold = n * query.x

    def block(u, reps):
        t = tilt.inverse_cdf(u)
        s = _y_sums(query, t)
        hit = s >= threshold
        hits = int(np.count_nonzero(hit))
        if hits == 0:
            return reps, 0, -math.inf, 0.0, 0.0
        lw = n * log_phi - lam * s[hit]
        bm = float(lw.max())
        e = np.exp(lw - bm)
        return reps, hits, bm, float(e.sum()), float((e * e).sum())

    reps, hits, m, s1, s2 = _run_blocks(query, block, workers)
    return _finalize(query, hits, m, s1, s2, estimator="is-exp", weighted=True)


def counterexample_is_tail(
    query: TailQuery, ct: CounterexampleTilt, workers: int = 1
) -> TailEstimate:
    """Importance sampling under the counterexample law (weight prod 1/g)."""
    model = query.model
    if ct.theta != model.theta:
        raise ParameterError(
            f"counterexample theta={ct.theta:g} does not match model theta={model.theta:g}"
        )
    sing = model.direction.singularity
    if sing is None or sing.exponent != ct.r:
        raise ParameterError(
            f"counterexample r={ct.r:g} does not match the model direction {model.direction.name!r}"
        )
    if ct.x != query.x:
        raise ParameterError(f"counterexample x={ct.x:g} does not match query x={query.x:g}")
    n = query.n
    threshold = n * query.x
    if ct.c == 0.0 and ct.w == 0.0:
        base = direct_mc_tail(query, workers=workers)
        return TailEstimate(**{**base.__dict__, "estimator": "is-ce"})
    log_bump = math.log1p(ct.c)
    log_def = math.log1p(-ct.w)

    def block(u, reps):
        t = counterexample_inverse_cdf(ct, u)
        s = _y_sums(query, t)
        hit = s >= threshold
        hits = int(np.count_nonzero(hit))
        if hits == 0:
            return reps, 0, -math.inf, 0.0, 0.0
        th = t[hit]
        n_bump = ((th > ct.theta) & (th < 2.0 * ct.theta)).sum(axis=1)
        n_def = (th > 1.0 - ct.w).sum(axis=1)
        lw = -(n_bump * log_bump + n_def * log_def)
        bm = float(lw.max())
        e = np.exp(lw - bm)
        return reps, hits, bm, float(e.sum()), float((e * e).sum())

    reps, hits, m, s1, s2 = _run_blocks(query, block, workers)
    return _finalize(query, hits, m, s1, s2, estimator="is-ce", weighted=True)


def estimate_from_probability(p: float, n: float, x: float, std_err: float = 0.0) -> TailEstimate:
    """Wrap a known/exact probability as a TailEstimate (rate bookkeeping only)."""
    nx2 = n * x * x
    log_p = math.log(p) if p > 0.0 else -math.inf
    rate = -log_p / nx2 if nx2 > 0 else math.nan
    return TailEstimate(
        p_hat=p,
        std_err=std_err,
        log_p=log_p,
        rate=rate,
        ci90=(rate, rate),
        n_effective=math.inf,
        hits=0,
        budget=0,
        estimator="exact",
    )


# --- schedules and the rate curve -------------------------------------------

_SCHED_RE = re.compile(
    r"^\s*(?:(?P<coef>[0-9.eE+-]+)\s*\*\s*)?(?:(?P<nexp>n\s*\^\s*(?P<exp>[+-]?[0-9.eE]+))|(?P<theta>theta)|(?P<const>[0-9.eE+-]+))\s*$"
)


@dataclass(frozen=True)
class Schedule:
    """Small expression grammar: constants, powers of n, products, and c*theta.

    Enough to express every regime of interest while keeping configs
    auditable.
    """

    kind: str  # "const" | "power" | "of_theta"
    coef: float
    exponent: float = 0.0
    text: str = ""

    def value(self, n: float, theta: Optional[float] = None) -> float:
        if self.kind == "const":
            return self.coef
        if self.kind == "power":
            return self.coef * float(n) ** self.exponent
        if theta is None:
            raise ConfigError(f"schedule {self.text!r} needs theta to evaluate")
        return self.coef * theta


def parse_schedule(text: str) -> Schedule:
    m = _SCHED_RE.match(text)
    if not m:
        raise ConfigError(
            f"cannot parse schedule {text!r}; grammar: '<c>', 'n^<e>', '<c>*n^<e>', '<c>*theta'"
        )
    coef = float(m.group("coef")) if m.group("coef") else 1.0
    if m.group("nexp"):
        return Schedule(kind="power", coef=coef, exponent=float(m.group("exp")), text=text)
    if m.group("theta"):
        return Schedule(kind="of_theta", coef=coef, text=text)
    value = float(m.group("const"))
    if m.group("coef"):
        value *= coef
    return Schedule(kind="const", coef=value, text=text)


@dataclass(frozen=True)
class RegimeInfo:
    """Advisory classification of a schedule; never alters computation."""

    tag: str  # "thm1" | "corollary" | "thm3" | "undecided"
    checks: dict = field(default_factory=dict)


def classify_schedule(
    direction: Direction,
    theta_sched: Schedule,
    x_sched: Schedule,
    n_grid: Sequence[int],
    q: Optional[float] = None,
) -> RegimeInfo:
    """Tag which sufficient-condition regime a schedule satisfies on the grid.

    Bounded directions are always 'thm1'.  Unbounded: 'corollary' when
    x/theta stays below 1/3 on the grid, else 'thm3' when q is supplied and
    both displayed conditions trend the right way numerically (x/theta^q
    increasing, x^((r-q)/q)*log(theta) shrinking), else 'undecided'.
    """
    thetas = [theta_sched.value(n) for n in n_grid]
    xs = [x_sched.value(n, theta=th) for n, th in zip(n_grid, thetas)]
    checks = {"x_over_theta": [x / th for x, th in zip(xs, thetas)]}
    if direction.bound is not None:
        return RegimeInfo(tag="thm1", checks=checks)
    if max(checks["x_over_theta"]) < 1.0 / 3.0:
        return RegimeInfo(tag="corollary", checks=checks)
    if q is not None and direction.singularity is not None:
        r = direction.singularity.exponent
        if 0.0 < q < r:
            growth = [x / th ** q for x, th in zip(xs, thetas)]
            decay = [abs(x ** ((r - q) / q) * math.log(th)) for x, th in zip(xs, thetas)]
            checks["x_over_theta_q"] = growth
            checks["x_ratio_log_theta"] = decay
            increasing = all(b > a for a, b in zip(growth, growth[1:]))
            decreasing = all(b < a for a, b in zip(decay, decay[1:]))
            if increasing and decreasing:
                return RegimeInfo(tag="thm3", checks=checks)
    return RegimeInfo(tag="undecided", checks=checks)


@dataclass(frozen=True)
class RatePoint:
    n: int
    x: float
    theta: float
    estimate: TailEstimate
    regime: str


def md_rate_curve(
    direction: Direction,
    theta_sched: Schedule,
    x_sched: Schedule,
    n_grid: Sequence[int],
    budget: int,
    stream_key: object = 0,
    estimator: str = "is",
    q: Optional[float] = None,
    grid_size: int = 4096,
    workers: int = 1,
    spec: QuadratureSpec = DEFAULT_SPEC,
):
    """Rate estimates along an (n, theta_n, x_n) schedule.

    Validates the moderate-deviation shape of the schedule (x_n positive and
    decreasing, n*x_n^2 increasing) and, for unbounded directions driven by
    the ratio form x = c*theta, enforces the regime bound c < 1/3.
    Returns a list of RatePoint records tagged with the regime
    classification.
    """
    n_grid = [int(n) for n in n_grid]
    if not n_grid:
        raise ConfigError("n grid is empty")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("n grid must be strictly increasing")
    thetas = [theta_sched.value(n) for n in n_grid]
    xs = [x_sched.value(n, theta=th) for n, th in zip(n_grid, thetas)]
    if any(x <= 0.0 for x in xs):
        raise ConfigError("x schedule must be positive on the whole grid")
    if any(b >= a for a, b in zip(xs, xs[1:])):
        raise ConfigError("x schedule must be strictly decreasing over the n grid")
    nx2 = [n * x * x for n, x in zip(n_grid, xs)]
    if any(b <= a for a, b in zip(nx2, nx2[1:])):
        raise ConfigError("n*x^2 must be strictly increasing over the n grid")
    if direction.bound is None and x_sched.kind == "of_theta" and x_sched.coef >= 1.0 / 3.0:
        raise ConfigError(
            f"Corollary preset requires x/theta ratio < 1/3, got {x_sched.coef:g}"
        )
    regime = classify_schedule(direction, theta_sched, x_sched, n_grid, q=q)
    points = []
    key = RandomStream(stream_key)
    for i, (n, theta, x) in enumerate(zip(n_grid, thetas, xs)):
        model = validate_model(direction, theta)
        constants = compute_constants(model, spec)
        query = TailQuery(
            model=model,
            constants=constants,
            n=n,
            x=x,
            mc_budget=budget,
            stream_key=key.substream(i),
        )
        if estimator == "direct":
            est = direct_mc_tail(query, workers=workers)
        elif estimator == "is":
            est = is_tail(query, grid_size=grid_size, workers=workers, spec=spec)
        else:
            raise ConfigError(f"unknown estimator {estimator!r} (want 'direct' or 'is')")
        points.append(RatePoint(n=n, x=x, theta=theta, estimate=est, regime=regime.tag))
    return points
