"""Sampleable change-of-measure distributions.

Two families are built here:

* the exponential tilt of the base law, with density on (0,1) proportional
  to (1 + theta*a(t))^(lambda/sigma0n), realized through a tabulated inverse
  CDF.  Knots are placed uniformly in probability u; the tabulated ordinate
  is the substituted coordinate v = t^(1-rho_eff) (rho_eff the effective
  density exponent at the singular endpoint), in which the inverse CDF is
  nearly linear, so monotone-cubic interpolation error stays uniformly small
  in probability, which is what importance weights feel.  Rejection sampling
  was rejected: its acceptance constants collapse for a_r near r = 1/2 and
  for tilt exponents near the domain boundary.

* the three-piece counterexample law with density
      g = 1 + c on (theta, 2*theta),  1 - w on (1-w, 1),  1 elsewhere,
  where c = x^((r+q)/q)/theta and w = x^((r+q)/(2q)), so theta*c = w^2 and
  the total mass is exactly 1.  Its inverse CDF is piecewise linear and is
  sampled exactly.  The tabulated lower bound kappa on the tilted mean of Y
  is stored and *compared*, never assumed: it is an asymptotic guarantee and
  finite fixtures may sit outside its validity region.

Tilt objects are immutable after construction; sampling takes caller-provided
streams, so there is no shared mutable state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from .directions import AlternativeModel
from .errors import DomainError, ParameterError, TiltRangeError
from .quadrature import (
    DEFAULT_SPEC,
    NormalizingConstants,
    QuadratureSpec,
    cell_masses,
    integrate_interval,
    mgf,
    mgf_boundary,
    standardized_log_ratio,
    tilted_mean,
)
from .streams import RandomStream

_T_FLOOR = 1e-300
_T_CEIL = float(np.nextafter(1.0, 0.0))


@dataclass(frozen=True, eq=False)
class ExponentialTilt:
    """Tabulated inverse CDF of the exponentially tilted law Q_lambda.

    ``u_knots``/``t_knots`` form the (probability, quantile) table; sampling
    interpolates the substituted coordinate v (t = v**power) with a monotone
    cubic whose coefficients are cached for fast evaluation.
    """

    model: AlternativeModel
    constants: NormalizingConstants
    lam: float
    phi: float
    grid_size: int
    u_knots: np.ndarray
    v_knots: np.ndarray
    power: float
    _coeffs: np.ndarray

    @property
    def t_knots(self) -> np.ndarray:
        if self.power == 1.0:
            return self.v_knots
        return self.v_knots ** self.power

    def inverse_cdf(self, u) -> np.ndarray:
        """Map uniforms to tilted draws through the table."""
        u = np.clip(np.asarray(u, dtype=float), 1e-16, 1.0 - 1e-16)
        idx = np.clip((u * self.grid_size).astype(np.int64), 0, self.grid_size - 1)
        du = u - self.u_knots[idx]
        c = self._coeffs
        v = ((c[0, idx] * du + c[1, idx]) * du + c[2, idx]) * du + c[3, idx]
        if self.power != 1.0:
            t = np.power(np.clip(v, _T_FLOOR, 1.0), self.power)
        else:
            t = v
        return np.clip(t, _T_FLOOR, _T_CEIL)

    def density(self, t) -> np.ndarray:
        """Tilted density exp(lambda*Y(t)) / phi."""
        y = standardized_log_ratio(self.model, self.constants)
        return np.exp(self.lam * y(t)) / self.phi


def solve_tilt(
    model: AlternativeModel,
    constants: NormalizingConstants,
    target_mean: float,
    tol: float = 1e-10,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> float:
    """Find lambda >= 0 with tilted mean m(lambda) = target_mean.

    m is increasing (log phi is strictly convex), so the root is bracketed by
    geometric expansion starting from (5/6)*sigma0n and then pinned with a
    standard bracketed solver.  Unreachable targets (sup m over the domain
    below target) raise TiltRangeError carrying the supremum achieved.
    """
    if target_mean < 0.0:
        raise ParameterError(f"target mean must be >= 0, got {target_mean}")
    if target_mean == 0.0:
        return 0.0
    boundary = mgf_boundary(model, constants)
    hi = (5.0 / 6.0) * constants.sigma0n
    if hi >= boundary:
        hi = boundary / 2.0

    def m(lam):
        return tilted_mean(model, constants, lam, spec)

    m_hi = m(hi)
    best = m_hi
    for _ in range(200):
        if m_hi >= target_mean:
            break
        if math.isinf(boundary):
            hi_next = hi * 2.0
        else:
            hi_next = (hi + boundary) / 2.0  # approach the boundary geometrically
        try:
            m_next = m(hi_next)
        except Exception:
            raise TiltRangeError(
                f"target mean {target_mean:g} unreachable; sup m achieved {best:g}",
                sup_mean=best,
            )
        if m_next <= m_hi + 1e-15:
            raise TiltRangeError(
                f"target mean {target_mean:g} unreachable (tilted mean saturated at {m_next:g})",
                sup_mean=max(best, m_next),
            )
        hi, m_hi = hi_next, m_next
        best = max(best, m_hi)
    else:
        raise TiltRangeError(
            f"target mean {target_mean:g} unreachable after bracket expansion; "
            f"sup m achieved {best:g}",
            sup_mean=best,
        )
    lam = brentq(lambda l: m(l) - target_mean, 0.0, hi, xtol=1e-15, rtol=8.9e-16)
    # Polish against the requested mean tolerance.
    if abs(m(lam) - target_mean) > tol:
        raise TiltRangeError(
            f"root solve left |m(lambda) - target| > tol at lambda={lam:g}", sup_mean=best
        )
    return lam


def build_tilt(
    model: AlternativeModel,
    constants: NormalizingConstants,
    lam: float,
    grid_size: int = 4096,
    spec: QuadratureSpec = DEFAULT_SPEC,
) -> ExponentialTilt:
    """Tabulate the inverse CDF of Q_lambda on ``grid_size`` equal-probability knots.

    lambda = 0 reproduces the uniform pushforward (the table is the identity).
    """
    if grid_size < 8:
        raise ParameterError(f"grid_size must be >= 8, got {grid_size}")
    if lam < 0.0:
        raise ParameterError(f"tilt parameter must be >= 0, got {lam}")
    d = model.direction
    s = lam / constants.sigma0n
    if s >= d.integrability_sup:
        raise DomainError(
            f"lambda={lam:g} at/past the mgf domain boundary; the tilted law is undefined"
        )

    sing = d.singularity
    if lam > 0.0 and sing is not None and sing.location == 0.0:
        rho = min(sing.exponent * max(s, 1.0), 0.95)
    else:
        rho = 0.0
    power = 1.0 / (1.0 - rho) if rho > 0.0 else 1.0

    y = standardized_log_ratio(model, constants)
    fine = 8 * grid_size
    v_edges = np.linspace(0.0, 1.0, fine + 1)

    if lam == 0.0:
        cdf = v_edges.copy()
    else:

        def tilted_density_v(v):
            t = np.clip(v ** power, _T_FLOOR, _T_CEIL) if power != 1.0 else v
            dens = np.exp(lam * y(t))
            if power != 1.0:
                dens = dens * power * np.power(v, power - 1.0)
            return dens

        masses = cell_masses(tilted_density_v, v_edges)
        cdf = np.concatenate(([0.0], np.cumsum(masses)))
        cdf /= cdf[-1]
        if np.any(np.diff(cdf) <= 0.0):
            raise DomainError("tilted CDF is not strictly increasing on the tabulation mesh")

    u_knots = np.linspace(0.0, 1.0, grid_size + 1)
    if lam == 0.0:
        v_knots = u_knots.copy()
    else:
        v_knots = PchipInterpolator(cdf, v_edges)(u_knots)
        v_knots[0] = 0.0
        v_knots[-1] = 1.0
        v_knots = np.maximum.accumulate(v_knots)

    interp = PchipInterpolator(u_knots, v_knots)
    phi = mgf(model, constants, lam, spec) if lam > 0.0 else 1.0
    return ExponentialTilt(
        model=model,
        constants=constants,
        lam=lam,
        phi=phi,
        grid_size=grid_size,
        u_knots=u_knots,
        v_knots=v_knots,
        power=power,
        _coeffs=np.ascontiguousarray(interp.c),
    )


def sample_tilt(tilt: ExponentialTilt, stream: RandomStream, count: int) -> np.ndarray:
    """count i.i.d. draws from the tilted law; deterministic per stream."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    return tilt.inverse_cdf(stream.uniforms(count))


# --- counterexample law ------------------------------------------------------


@dataclass(frozen=True)
class CounterexampleTilt:
    """Piecewise-constant law concentrating mass next to the a_r singularity.

    Density 1 + c on (theta, 2*theta), 1 - w on (1-w, 1), and 1 elsewhere,
    with theta*c = w^2 so the total mass is exactly 1.  kappa is the stored
    analytic lower bound on the mean of Y under this law.
    """

    r: float
    q: float
    theta: float
    x: float
    c: float
    w: float
    kappa: float

    def density(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        g = np.ones_like(t)
        g = np.where((t > self.theta) & (t < 2.0 * self.theta), 1.0 + self.c, g)
        g = np.where(t > 1.0 - self.w, 1.0 - self.w, g)
        return g

    def log_density(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        if self.c > 0.0:
            out = np.where(
                (t > self.theta) & (t < 2.0 * self.theta), math.log1p(self.c), out
            )
        if self.w > 0.0:
            out = np.where(t > 1.0 - self.w, math.log1p(-self.w), out)
        return out


def make_counterexample(r: float, q: float, theta: float, x: float) -> CounterexampleTilt:
    """Construct the counterexample law for parameters (r, q, theta, x).

    Requires 0 < q < r < 1/2, a bump height c = x^((r+q)/q)/theta and
    deficit width w = x^((r+q)/(2q)) with w < 1 and non-overlapping pieces
    (2*theta < 1 - w).  x = 0 degenerates to the uniform law.
    """
    if not (0.0 < q < r < 0.5):
        raise ParameterError(f"need 0 < q < r < 1/2, got q={q}, r={r}")
    if not (theta > 0.0):
        raise ParameterError(f"theta must be positive, got {theta}")
    if x < 0.0:
        raise ParameterError(f"x must be >= 0, got {x}")
    expo = (r + q) / q
    c = x ** expo / theta
    w = x ** (expo / 2.0)
    if w >= 1.0:
        raise ParameterError(f"deficit width w={w:g} >= 1: density would be nonpositive")
    if 2.0 * theta >= 1.0 - w:
        raise ParameterError(
            f"bump (theta, 2*theta) overlaps deficit (1-w, 1): 2*theta={2*theta:g} >= 1-w={1-w:g}"
        )
    kappa = 0.5 * math.sqrt(1.0 - 2.0 * r) * x * (x / theta ** q) ** (r / q) if x > 0.0 else 0.0
    return CounterexampleTilt(r=r, q=q, theta=theta, x=x, c=c, w=w, kappa=kappa)


def counterexample_kl(ct: CounterexampleTilt) -> float:
    """Exact KL divergence of the counterexample law from the uniform law.

    int g log g = theta*(1+c)*log(1+c) + w*(1-w)*log(1-w); nonnegative, zero
    iff the law is uniform (x = 0).
    """
    bump = ct.theta * (1.0 + ct.c) * math.log1p(ct.c) if ct.c > 0.0 else 0.0
    deficit = ct.w * (1.0 - ct.w) * math.log1p(-ct.w) if ct.w > 0.0 else 0.0
    return bump + deficit


def _piece_edges(ct: CounterexampleTilt):
    """(t_lo, t_hi, density) for the pieces of g, in increasing t order."""
    return (
        (0.0, ct.theta, 1.0),
        (ct.theta, 2.0 * ct.theta, 1.0 + ct.c),
        (2.0 * ct.theta, 1.0 - ct.w, 1.0),
        (1.0 - ct.w, 1.0, 1.0 - ct.w),
    )


def sample_counterexample(ct: CounterexampleTilt, stream: RandomStream, count: int) -> np.ndarray:
    """Exact inverse-CDF sampling of the three-piece law."""
    if count < 1:
        raise ParameterError(f"count must be >= 1, got {count}")
    return counterexample_inverse_cdf(ct, stream.uniforms(count))


def counterexample_inverse_cdf(ct: CounterexampleTilt, u) -> np.ndarray:
    """Map uniforms through the exact piecewise-linear inverse CDF."""
    pieces = _piece_edges(ct)
    cum = np.concatenate(([0.0], np.cumsum([(hi - lo) * g for lo, hi, g in pieces])))
    cum[-1] = 1.0  # closes exactly by the theta*c = w^2 identity
    u = np.clip(np.asarray(u, dtype=float), 1e-16, 1.0 - 1e-16)
    idx = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(pieces) - 1)
    lo = np.array([p[0] for p in pieces])
    dens = np.array([p[2] for p in pieces])
    t = lo[idx] + (u - cum[idx]) / dens[idx]
    return np.clip(t, _T_FLOOR, _T_CEIL)


def counterexample_moments(
    ct: CounterexampleTilt,
    model: AlternativeModel,
    constants: NormalizingConstants,
    spec: QuadratureSpec = DEFAULT_SPEC,
):
    """(E[Y], E[Y^2]) under the counterexample law, by quadrature.

    Relies on E[Y] = 0 and E[Y^2] = 1 under the base law (these hold exactly
    by construction of the normalizing constants), so only the bump and
    deficit corrections are integrated.
    """
    if ct.theta != model.theta:
        raise ParameterError(
            f"counterexample theta={ct.theta:g} does not match model theta={model.theta:g}"
        )
    y = standardized_log_ratio(model, constants)
    mean = 0.0
    second = 1.0
    if ct.c > 0.0:
        m1, _ = integrate_interval(y, ct.theta, 2.0 * ct.theta, spec)
        m2, _ = integrate_interval(lambda t: y(t) ** 2, ct.theta, 2.0 * ct.theta, spec)
        mean += ct.c * m1
        second += ct.c * m2
    if ct.w > 0.0:
        d1, _ = integrate_interval(y, 1.0 - ct.w, 1.0, spec)
        d2, _ = integrate_interval(lambda t: y(t) ** 2, 1.0 - ct.w, 1.0, spec)
        mean -= ct.w * d1
        second -= ct.w * d2
    return mean, second
