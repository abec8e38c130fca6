"""Experiment runner.

Commands:

* ``constants``        normalizing constants e0n, sigma0n along a grid
* ``rates``            Monte Carlo / importance-sampling rate estimates
* ``bracket``          certified analytic rate brackets (no sampling)
* ``mogulskii-check``  exact verification of the sum inequality on discrete laws
* ``counterexample``   ingredients of the slow-rate construction

Each run writes ``<command>_results.csv`` plus ``<command>_manifest.json``
into the output directory (``--out``, else $MDTAIL_OUTDIR, else cwd).  The
manifest embeds the full resolved configuration, per-point constants, the
regime classification, the stream key and the library version, so every
number in the results table is re-derivable from the manifest alone.  Runs
are deterministic: same config, same bytes, regardless of worker count.

Exit codes: 0 success, 2 configuration error, 3 numeric error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import __version__
from .bounds import (
    DiscreteDistribution,
    certified_rate_bracket,
    mogulskii_lower,
    thm3_schedule,
)
from .directions import parse_direction, validate_model
from .errors import ConfigError, MdtailError, ParameterError
from .quadrature import QuadratureSpec, compute_constants, proposition_ratios
from .simulate import (
    classify_schedule,
    counterexample_is_tail,
    direct_mc_tail,
    is_tail,
    md_rate_curve,
    parse_schedule,
    TailQuery,
)
from .streams import RandomStream
from .tilting import counterexample_kl, counterexample_moments, make_counterexample


@dataclass
class ExperimentConfig:
    """Fully resolved run configuration; round-trips through to_dict/from_dict."""

    command: str
    direction: str = ""
    theta: str = ""
    x: Optional[str] = None
    x_over_theta: Optional[float] = None
    n_grid: str = ""
    budget: int = 0
    seed: int = 0
    workers: int = 1
    estimator: str = "is"
    grid_size: int = 4096
    exact_solve: bool = False
    q: Optional[float] = None
    regime: str = ""
    k_range: str = ""
    r: Optional[float] = None
    theta_value: Optional[float] = None
    x_value: Optional[float] = None
    n_value: Optional[int] = None
    trials: int = 1000
    n_max: int = 12
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    out: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    def quad_spec(self) -> QuadratureSpec:
        return QuadratureSpec(rel_tol=self.rel_tol, abs_tol=self.abs_tol)


def parse_grid(text: str):
    """Grid grammar: 'a,b,c' or 'lo:hi:log' (points at the powers of 10)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3 or parts[2] != "log":
            raise ConfigError(f"grid {text!r} not understood; want 'lo:hi:log' or a comma list")
        lo, hi = float(parts[0]), float(parts[1])
        if not (0 < lo < hi):
            raise ConfigError(f"grid bounds must satisfy 0 < lo < hi, got {text!r}")
        k0, k1 = math.log10(lo), math.log10(hi)
        if abs(k0 - round(k0)) > 1e-9 or abs(k1 - round(k1)) > 1e-9:
            raise ConfigError(f"'lo:hi:log' grid wants powers of ten, got {text!r}")
        return [int(round(10.0 ** k)) for k in range(int(round(k0)), int(round(k1)) + 1)]
    try:
        return [int(float(tok)) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse grid {text!r}")


def parse_k_range(text: str):
    parts = text.split(":")
    if len(parts) != 2:
        raise ConfigError(f"k range {text!r} not understood; want 'lo:hi'")
    lo, hi = int(parts[0]), int(parts[1])
    if hi < lo:
        raise ConfigError(f"k range {text!r} is empty")
    return list(range(lo, hi + 1))


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_outputs(config: ExperimentConfig, columns, rows, manifest_extra):
    out_dir = config.out or os.environ.get("MDTAIL_OUTDIR", "") or "."
    os.makedirs(out_dir, exist_ok=True)
    base = config.command.replace("-", "_")
    csv_path = os.path.join(out_dir, f"{base}_results.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    manifest = {
        "command": config.command,
        "config": config.to_dict(),
        "library_version": __version__,
        "stream_key": config.seed,
        "columns": list(columns),
    }
    manifest.update(manifest_extra)
    manifest_path = os.path.join(out_dir, f"{base}_manifest.json")
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, manifest_path


def _constants_records(direction, theta_sched, n_grid, spec):
    records = []
    for n in n_grid:
        theta = theta_sched.value(n)
        model = validate_model(direction, theta)
        consts = compute_constants(model, spec)
        ratio_e, ratio_sigma = proposition_ratios(model, consts)
        records.append(
            {
                "n": n,
                "theta": theta,
                "e0n": consts.e0n,
                "sigma0n": consts.sigma0n,
                "ratio_e": ratio_e,
                "ratio_sigma": ratio_sigma,
            }
        )
    return records


def run_constants(config: ExperimentConfig):
    direction = parse_direction(config.direction)
    theta_sched = parse_schedule(config.theta)
    n_grid = parse_grid(config.n_grid)
    spec = config.quad_spec()
    records = _constants_records(direction, theta_sched, n_grid, spec)
    columns = ["n", "theta", "e0n", "sigma0n", "ratio_e", "ratio_sigma"]
    rows = [[rec[c] for c in columns] for rec in records]
    return columns, rows, {"constants": records, "regime": {"tag": "n/a", "checks": {}}}


def run_rates(config: ExperimentConfig):
    direction = parse_direction(config.direction)
    theta_sched = parse_schedule(config.theta)
    if config.x_over_theta is not None:
        x_sched = parse_schedule(f"{config.x_over_theta!r}*theta")
    elif config.x:
        x_sched = parse_schedule(config.x)
    else:
        raise ConfigError("rates needs --x or --x-over-theta")
    n_grid = parse_grid(config.n_grid)
    if config.budget < 1000:
        raise ConfigError(f"--budget must be >= 1000, got {config.budget}")
    spec = config.quad_spec()
    points = md_rate_curve(
        direction,
        theta_sched,
        x_sched,
        n_grid,
        budget=config.budget,
        stream_key=config.seed,
        estimator=config.estimator,
        q=config.q,
        grid_size=config.grid_size,
        workers=config.workers,
        spec=spec,
    )
    regime = classify_schedule(direction, theta_sched, x_sched, n_grid, q=config.q)
    columns = [
        "n",
        "x",
        "theta",
        "p_hat",
        "std_err",
        "rate",
        "ci_lo",
        "ci_hi",
        "n_effective",
        "estimator",
    ]
    rows = []
    for pt in points:
        est = pt.estimate
        rows.append(
            [
                pt.n,
                pt.x,
                pt.theta,
                est.p_hat,
                est.std_err,
                est.rate,
                est.ci90[0],
                est.ci90[1],
                est.n_effective,
                est.estimator,
            ]
        )
    constants = _constants_records(direction, theta_sched, n_grid, spec)
    return columns, rows, {
        "constants": constants,
        "regime": {"tag": regime.tag, "checks": regime.checks},
    }


def run_bracket(config: ExperimentConfig):
    direction = parse_direction(config.direction)
    spec = config.quad_spec()
    columns = ["n", "x", "theta", "kl", "p_n_bound", "M", "upper_rate", "lower_rate", "regime"]
    rows = []
    constants_records = []
    if config.regime == "thm3":
        sing = direction.singularity
        if sing is None:
            raise ConfigError("bracket --regime thm3 needs an unbounded ar:<r> direction")
        if not config.k_range:
            raise ConfigError("bracket --regime thm3 needs --k lo:hi")
        q = config.q if config.q is not None else 0.25
        ks = parse_k_range(config.k_range)
        for k, x, theta, n in thm3_schedule(ks):
            model = validate_model(direction, theta)
            consts = compute_constants(model, spec)
            ct = make_counterexample(sing.exponent, q, theta, x)
            br = certified_rate_bracket(model, consts, n, x, ct=ct, spec=spec)
            ratio_e, ratio_sigma = proposition_ratios(model, consts)
            constants_records.append(
                {
                    "n": n,
                    "theta": theta,
                    "e0n": consts.e0n,
                    "sigma0n": consts.sigma0n,
                    "ratio_e": ratio_e,
                    "ratio_sigma": ratio_sigma,
                }
            )
            rows.append(
                [n, x, theta, br.kl, br.p_n_bound, br.big_m, br.upper_rate, br.lower_rate, br.regime]
            )
        regime = {"tag": "thm3", "checks": {"k": ks, "q": q}}
    else:
        theta_sched = parse_schedule(config.theta)
        x_sched = parse_schedule(config.x) if config.x else None
        if x_sched is None:
            raise ConfigError("bracket needs --x (or --regime thm3 with --k)")
        n_grid = parse_grid(config.n_grid)
        info = classify_schedule(direction, theta_sched, x_sched, n_grid, q=config.q)
        for n in n_grid:
            theta = theta_sched.value(n)
            x = x_sched.value(n, theta=theta)
            model = validate_model(direction, theta)
            consts = compute_constants(model, spec)
            br = certified_rate_bracket(model, consts, n, x, spec=spec)
            ratio_e, ratio_sigma = proposition_ratios(model, consts)
            constants_records.append(
                {
                    "n": n,
                    "theta": theta,
                    "e0n": consts.e0n,
                    "sigma0n": consts.sigma0n,
                    "ratio_e": ratio_e,
                    "ratio_sigma": ratio_sigma,
                }
            )
            rows.append(
                [n, x, theta, br.kl, br.p_n_bound, br.big_m, br.upper_rate, br.lower_rate, br.regime]
            )
        regime = {"tag": info.tag, "checks": info.checks}
    return columns, rows, {"constants": constants_records, "regime": regime}


def _random_discrete(rng, max_atoms=4):
    k = int(rng.integers(2, max_atoms + 1))
    values = np.sort(rng.uniform(-2.0, 2.0, size=k))
    probs = rng.dirichlet(np.ones(k))
    probs = probs / probs.sum()
    atoms = tuple(zip(values.tolist(), probs.tolist()))
    return DiscreteDistribution(atoms)


def mogulskii_instances(trials: int, seed, n_max: int = 12):
    """The fixed two-point fixture plus randomized tilted instances."""
    base = DiscreteDistribution(((-1.0, 0.5), (1.0, 0.5)))
    fixture = ("fixture", base, base.tilt(math.atanh(0.2)), 0.3, 1.8, 10)
    yield fixture
    rng = RandomStream(seed).substream(777).generator()
    for i in range(trials):
        p = _random_discrete(rng)
        lam = float(rng.uniform(0.0, 1.5))
        q = p.tilt(lam)
        n = int(rng.integers(1, n_max + 1))
        lo, hi = p.values.min(), p.values.max()
        x = float(rng.uniform(lo, hi))
        big_m = float(rng.uniform(0.05, 20.0))
        yield (f"random-{i}", p, q, x, big_m, n)


def run_mogulskii_check(config: ExperimentConfig):
    columns = ["instance", "n", "x", "M", "kl", "p_event", "p_n", "lhs", "rhs", "holds"]
    rows = []
    violations = 0
    for name, p, q, x, big_m, n in mogulskii_instances(config.trials, config.seed, config.n_max):
        chk = mogulskii_lower(p, q, x, big_m, n)
        if not chk.holds:
            violations += 1
        rows.append([name, n, x, big_m, chk.kl, chk.p_event, chk.p_n, chk.lhs, chk.rhs, chk.holds])
    extra = {
        "constants": [],
        "regime": {"tag": "n/a", "checks": {"violations": violations, "trials": config.trials}},
    }
    return columns, rows, extra


def run_counterexample(config: ExperimentConfig):
    if config.r is None or config.q is None or config.theta_value is None or config.x_value is None:
        raise ConfigError("counterexample needs --r, --q, --theta and --x")
    from .directions import make_ar

    spec = config.quad_spec()
    direction = make_ar(config.r)
    model = validate_model(direction, config.theta_value)
    consts = compute_constants(model, spec)
    ct = make_counterexample(config.r, config.q, config.theta_value, config.x_value)
    kl = counterexample_kl(ct)
    asymptotic = ct.theta * ct.c * math.log(ct.c) if ct.c > 1.0 else math.nan
    q_mean, q_second = counterexample_moments(ct, model, consts, spec)
    columns = [
        "r",
        "q",
        "theta",
        "x",
        "c",
        "w",
        "kappa",
        "kl",
        "kl_asymptotic_ratio",
        "q_mean",
        "q_second_moment",
        "eq20_margin",
        "p_hat_is",
        "p_hat_direct",
    ]
    p_is = math.nan
    p_direct = math.nan
    if config.n_value and config.budget:
        query = TailQuery(
            model=model,
            constants=consts,
            n=config.n_value,
            x=config.x_value,
            mc_budget=config.budget,
            stream_key=config.seed,
        )
        p_is = counterexample_is_tail(query, ct, workers=config.workers).p_hat
        p_direct = direct_mc_tail(query, workers=config.workers).p_hat
    rows = [
        [
            ct.r,
            ct.q,
            ct.theta,
            ct.x,
            ct.c,
            ct.w,
            ct.kappa,
            kl,
            kl / asymptotic if asymptotic and not math.isnan(asymptotic) else math.nan,
            q_mean,
            q_second,
            q_mean - ct.kappa,
            p_is,
            p_direct,
        ]
    ]
    constants = [
        {
            "n": config.n_value or 0,
            "theta": config.theta_value,
            "e0n": consts.e0n,
            "sigma0n": consts.sigma0n,
        }
    ]
    return columns, rows, {"constants": constants, "regime": {"tag": "thm3", "checks": {}}}


_RUNNERS = {
    "constants": run_constants,
    "rates": run_rates,
    "bracket": run_bracket,
    "mogulskii-check": run_mogulskii_check,
    "counterexample": run_counterexample,
}


def run(config: ExperimentConfig):
    """Execute a resolved configuration; returns (csv_path, manifest_path)."""
    if config.command not in _RUNNERS:
        raise ConfigError(f"unknown command {config.command!r}")
    columns, rows, extra = _RUNNERS[config.command](config)
    return _write_outputs(config, columns, rows, extra)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdtail", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--out", default="", help="output directory (default $MDTAIL_OUTDIR or .)")
        p.add_argument("--rel-tol", type=float, default=1e-10)
        p.add_argument("--abs-tol", type=float, default=1e-12)

    p = sub.add_parser("constants", help="normalizing constants along a grid")
    p.add_argument("--direction", required=True)
    p.add_argument("--theta", required=True, help="schedule, e.g. '0.5' or 'n^-0.25'")
    p.add_argument("--n", dest="n_grid", required=True, help="grid, e.g. '10:10000:log'")
    add_common(p)

    p = sub.add_parser("rates", help="Monte Carlo rate estimates along a schedule")
    p.add_argument("--direction", required=True)
    p.add_argument("--theta", required=True)
    p.add_argument("--x", default=None, help="x schedule, e.g. 'n^-0.25'")
    p.add_argument("--x-over-theta", type=float, default=None, help="x = ratio * theta")
    p.add_argument("--n", dest="n_grid", required=True)
    p.add_argument("--budget", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--estimator", choices=["is", "direct"], default="is")
    p.add_argument("--grid-size", type=int, default=4096)
    p.add_argument("--q", type=float, default=None)
    add_common(p)

    p = sub.add_parser("bracket", help="certified analytic rate brackets")
    p.add_argument("--direction", required=True)
    p.add_argument("--regime", choices=["thm2", "thm3"], default="thm2")
    p.add_argument("--theta", default="")
    p.add_argument("--x", default=None)
    p.add_argument("--n", dest="n_grid", default="")
    p.add_argument("--k", dest="k_range", default="", help="thm3 witness grid, e.g. '2:6'")
    p.add_argument("--q", type=float, default=None)
    add_common(p)

    p = sub.add_parser("mogulskii-check", help="exact checks of the sum inequality")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-max", type=int, default=12)
    add_common(p)

    p = sub.add_parser("counterexample", help="counterexample-law ingredients")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--theta", dest="theta_value", type=float, required=True)
    p.add_argument("--x", dest="x_value", type=float, required=True)
    p.add_argument("--n", dest="n_value", type=int, default=0)
    p.add_argument("--budget", type=float, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    add_common(p)

    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig(command=args.command)
    for name in vars(args):
        if name == "command":
            continue
        value = getattr(args, name)
        if name == "budget" and value is not None:
            value = int(float(value))
        if hasattr(config, name):
            setattr(config, name, value)
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = config_from_args(args)
        csv_path, manifest_path = run(config)
    except (ConfigError, ParameterError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except MdtailError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    print(csv_path)
    print(manifest_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
