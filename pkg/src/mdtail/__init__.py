"""Moderate-deviation tails of the log-likelihood-ratio statistic for
local alternatives to uniformity: normalizing constants by singularity-aware
quadrature, exponential-tilt and counterexample importance sampling, and
certified analytic rate brackets."""

__version__ = "0.1.0"

from .directions import (
    AlternativeModel,
    Direction,
    Singularity,
    eval_direction,
    make_ar,
    make_cosine,
    make_step,
    parse_direction,
    validate_model,
    verify_normalization,
)
from .quadrature import (
    DEFAULT_SPEC,
    NormalizingConstants,
    QuadratureSpec,
    compute_constants,
    integrate_unit,
    kl_exponential_tilt,
    mgf,
    mgf_boundary,
    mgf_derivatives,
    proposition_ratios,
    tilted_mean,
    tilted_variance,
)
from .tilting import (
    CounterexampleTilt,
    ExponentialTilt,
    build_tilt,
    counterexample_kl,
    counterexample_moments,
    make_counterexample,
    sample_counterexample,
    sample_tilt,
    solve_tilt,
)
from .simulate import (
    RatePoint,
    Schedule,
    TailEstimate,
    TailQuery,
    classify_schedule,
    compute_vn,
    counterexample_is_tail,
    direct_mc_tail,
    is_tail,
    md_rate_curve,
    parse_schedule,
)
from .bounds import (
    DiscreteDistribution,
    RateBracket,
    bernstein_bound,
    cantelli_bound,
    certified_rate_bracket,
    check_log_inequality,
    chernoff_upper,
    h_function,
    mogulskii_lower,
    thm3_schedule,
)
from .streams import RandomStream
from . import errors

__all__ = [name for name in dir() if not name.startswith("_")]
