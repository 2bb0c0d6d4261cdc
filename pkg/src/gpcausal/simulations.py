"""Monte Carlo designs for the overlap, RD and placebo-cutoff experiments.

Every replication draws from its own counter-based stream,
``Philox(SeedSequence(seed, spawn_key=(rep,)))``, so a report depends only
on the config and never on execution order or worker count. Settings within
a design reuse the same per-replication streams (common random numbers),
which keeps comparisons across a noise grid tight.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .errors import ConfigError, GPError, InputError
from .estimators import RD_VARIANTS, fit_arms, rd_estimate, t_learner_ate, t_learner_cate
from .gp_core import Dataset

__all__ = [
    "RNG_ALGORITHM",
    "RandomFunction",
    "SimConfig",
    "SimReport",
    "DESIGNS",
    "rep_rng",
    "draw_random_function",
    "calibrate_noise",
    "random_function_data",
    "score",
    "overlap_sim",
    "rd_total_random_sim",
    "rd_latent_sim",
    "rd_placebo_subsample",
    "run_simulation",
]

RNG_ALGORITHM = "numpy Philox4x64-10, stream per replication = SeedSequence(seed, spawn_key=(rep,))"
DESIGNS = ("overlap", "rd_total_random", "rd_latent", "rd_placebo_subsample")
TRUE_EFFECT = 3.0
DATA_STREAM = 2**32 - 1  # spawn key for synthetic placebo data, disjoint from rep streams


def rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(rep,))))


@dataclass(frozen=True)
class RandomFunction:
    """Sum of Gaussian bumps ``f(x) = sum_j c_j exp(-(x - x_j)^2 / b)``."""

    knots: np.ndarray
    coefs: np.ndarray
    bandwidth: float = 0.5

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-((x[..., None] - self.knots) ** 2) / self.bandwidth) @ self.coefs


def draw_random_function(rng: np.random.Generator, n_knots: int = 10, low: float = -3.0,
                         high: float = 3.0, bandwidth: float = 0.5) -> RandomFunction:
    knots = rng.uniform(low, high, n_knots)
    coefs = rng.normal(0.0, 1.0, n_knots)
    return RandomFunction(knots, coefs, bandwidth)


def calibrate_noise(f_values, r2_target: float) -> float:
    """Noise sd that makes ``Var(f) / (Var(f) + Var(eps))`` equal ``r2_target``."""
    if not 0 < r2_target < 1:
        raise InputError(f"R^2 target must be in (0, 1), got {r2_target}")
    var_f = float(np.var(np.asarray(f_values, dtype=float), ddof=1))
    if not var_f > 0:
        raise InputError("function values have zero variance")
    return math.sqrt(var_f * (1.0 - r2_target) / r2_target)


def random_function_data(rng: np.random.Generator, n: int, r2: float, low=-3.0, high=3.0):
    """Regression sample ``y = f(x) + eps`` with x uniform and calibrated R^2."""
    f = draw_random_function(rng)
    x = rng.uniform(low, high, n)
    fx = f(x)
    y = fx + rng.normal(0.0, calibrate_noise(fx, r2), n)
    return Dataset(x, y), f


def score(estimates, truth: float) -> tuple[float, float, float]:
    """(coverage, mean CI length, RMSE) of ``[(estimate, (lo, hi)), ...]``."""
    if len(estimates) == 0:
        raise InputError("score needs at least one estimate")
    est = np.array([e for e, _ in estimates], dtype=float)
    lo = np.array([c[0] for _, c in estimates], dtype=float)
    hi = np.array([c[1] for _, c in estimates], dtype=float)
    coverage = float(np.mean((lo <= truth) & (truth <= hi)))
    return coverage, float(np.mean(hi - lo)), float(np.sqrt(np.mean((est - truth) ** 2)))


@dataclass(frozen=True)
class SimConfig:
    """One Monte Carlo run. Fields irrelevant to ``design`` are ignored."""

    design: str
    n: int = 500
    reps: int = 200
    seed: int = 0
    level: float = 0.95
    # overlap
    r2: float = 0.3
    treated_frac: float = 0.5
    grid_points: int = 61
    # rd_total_random
    sigmas: tuple = (0.1, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    taus: tuple = (0.0,)
    # rd_latent
    steepness: tuple = (1.0, 5.0, 10.0)
    noise: tuple = (0.5, 1.0)
    bandwidth: float = 0.005
    trim: tuple | None = None
    # rd_placebo_subsample
    cutoffs: tuple = (0.3, 0.4, 0.5, 0.6, 0.7)
    true_cutoff: float = 0.5
    window: float = 0.1
    subsample: int = 200
    truth: float | None = None
    variants: tuple | None = None
    n_jobs: int = 1
    keep_replications: bool = False

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"design must be one of {DESIGNS}, got {self.design!r}")
        if self.n < 10:
            raise ConfigError(f"n must be at least 10, got {self.n}")
        if self.reps < 1:
            raise ConfigError(f"reps must be at least 1, got {self.reps}")
        if not 0 < self.level < 1:
            raise ConfigError(f"level must be in (0, 1), got {self.level}")
        if not 0 < self.r2 < 1:
            raise ConfigError(f"r2 must be in (0, 1), got {self.r2}")
        if not 0 < self.treated_frac < 1:
            raise ConfigError(f"treated_frac must be in (0, 1), got {self.treated_frac}")
        if any(not 0 < s <= 3 for s in self.sigmas):
            raise ConfigError(f"sigmas must lie in (0, 3], got {self.sigmas}")
        if any(s <= 0 for s in self.steepness) or any(s < 0 for s in self.noise):
            raise ConfigError("steepness must be positive and noise nonnegative")
        if self.window <= 0 or self.subsample < 4:
            raise ConfigError("window must be positive and subsample at least 4")
        for v in self.variants or ():
            if v not in RD_VARIANTS:
                raise ConfigError(f"unknown RD variant {v!r}")
        for name in ("sigmas", "taus", "steepness", "noise", "cutoffs"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        if self.trim is not None:
            object.__setattr__(self, "trim", tuple(float(v) for v in self.trim))
        if self.variants is not None:
            object.__setattr__(self, "variants", tuple(self.variants))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("n_jobs", "keep_replications"):
            d.pop(k)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class SimReport:
    """Summary rows (one per setting x estimator) plus optional pointwise rows."""

    design: str
    rows: list = field(default_factory=list)
    pointwise: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    replications: list = field(default_factory=list)

    def row(self, estimator: str, **setting) -> dict:
        for r in self.rows:
            if r["estimator"] == estimator and all(r.get(k) == v for k, v in setting.items()):
                return r
        raise KeyError(f"no row for {estimator} {setting}")


def _summary_row(setting: dict, estimator: str, results, truth: float) -> dict:
    ok = [r for r in results if r is not None]
    row = dict(setting)
    row.update(estimator=estimator, truth=truth, n_reps=len(results), n_failed=len(results) - len(ok))
    if ok:
        cov, length, rmse = score(ok, truth)
        est = np.array([e for e, _ in ok])
        row.update(coverage=cov, mean_ci_length=length, rmse=rmse, mean_estimate=float(est.mean()),
                   sd_estimate=float(est.std(ddof=1)) if len(ok) > 1 else 0.0)
    else:
        row.update(coverage=float("nan"), mean_ci_length=float("nan"), rmse=float("nan"),
                   mean_estimate=float("nan"), sd_estimate=float("nan"))
    return row


def _run_reps(func, config: SimConfig, *args):
    def one(rep):
        with threadpool_limits(limits=1):
            return func(config, rep, *args)

    if config.n_jobs == 1:
        return [one(r) for r in range(config.reps)]
    return Parallel(n_jobs=config.n_jobs)(delayed(one)(r) for r in range(config.reps))


def _provenance(config: SimConfig) -> dict:
    return {"seed": config.seed, "reps": config.reps, "config_hash": config.config_hash(),
            "rng": RNG_ALGORITHM, "config": config.to_dict()}


def _safe_rd(data, cutoff, variant, config, trim=None):
    try:
        r = rd_estimate(data, cutoff, variant, bandwidth=config.bandwidth, trim_window=trim,
                        level=config.level)
    except GPError:
        return None
    return r.effect, r.ci


# -- overlap -----------------------------------------------------------------

TREATED_SUPPORT = (-3.0, 1.0)
CONTROL_SUPPORT = (-2.0, 3.0)
OVERLAP_REGION = (-2.0, 1.0)


def overlap_data(rng, n, r2=0.3, treated_frac=0.5, effect=TRUE_EFFECT, f0=None):
    """One draw of the poor-overlap design: treated on (-3, 1), controls on (-2, 3)."""
    if f0 is None:
        f0 = draw_random_function(rng)
    n1 = int(round(n * treated_frac))
    n0 = n - n1
    x = np.concatenate([rng.uniform(*TREATED_SUPPORT, n1), rng.uniform(*CONTROL_SUPPORT, n0)])
    d = np.concatenate([np.ones(n1, int), np.zeros(n0, int)])
    cef = f0(x) + effect * d
    y = cef + rng.normal(0.0, calibrate_noise(cef, r2), n) if r2 < 1 else cef
    return Dataset(x, y, treat=d), f0


def overlap_grid(points: int = 61) -> np.ndarray:
    return np.round(np.linspace(-3.0, 3.0, points), 12)


def _overlap_rep(config, rep, grid):
    rng = rep_rng(config.seed, rep)
    data, _ = overlap_data(rng, config.n, config.r2, config.treated_frac)
    models = fit_arms(data)
    cate = t_learner_cate(data, grid, config.level, models=models)
    ate = t_learner_ate(data, "ATE", config.level, models=models)
    return {"cate": cate.tau, "cate_se": cate.se, "lo": cate.ci_lower, "hi": cate.ci_upper,
            "ate": ate.estimate, "ate_ci": ate.ci, "ate_se": ate.se,
            "sigma2": (models[0].sigma2, models[1].sigma2)}


def overlap_sim(config: SimConfig) -> SimReport:
    """Random-function CEF, constant effect 3, poor covariate overlap; GP T-learner."""
    if config.design != "overlap":
        raise ConfigError(f"overlap_sim got design {config.design!r}")
    grid = overlap_grid(config.grid_points)
    reps = _run_reps(_overlap_rep, config, grid)
    report = SimReport("overlap", provenance=_provenance(config))
    setting = {"n": config.n, "r2": config.r2, "treated_frac": config.treated_frac}
    report.rows.append(_summary_row(setting, "gp_ate", [(r["ate"], r["ate_ci"]) for r in reps], TRUE_EFFECT))
    lo = np.array([r["lo"] for r in reps])
    hi = np.array([r["hi"] for r in reps])
    tau = np.array([r["cate"] for r in reps])
    covered = (lo <= TRUE_EFFECT) & (TRUE_EFFECT <= hi)
    for j, x in enumerate(grid):
        report.pointwise.append({
            "estimator": "gp_cate", "x": float(x), "truth": TRUE_EFFECT,
            "coverage": float(covered[:, j].mean()),
            "ci_length": float((hi[:, j] - lo[:, j]).mean()),
            "rmse": float(np.sqrt(np.mean((tau[:, j] - TRUE_EFFECT) ** 2))),
        })
    if config.keep_replications:
        report.replications = reps
    return report


# -- RD: total random ----------------------------------------------------------

def _total_random_rep(config, rep, settings, variants):
    rng = rep_rng(config.seed, rep)
    x = rng.normal(0.0, 1.0, config.n)
    e = rng.normal(0.0, 1.0, config.n)
    out = []
    for tau, sigma in settings:
        data = Dataset(x, sigma * e + tau * (x > 0))
        out.append([_safe_rd(data, 0.0, v, config) for v in variants])
    return out


def rd_total_random_sim(config: SimConfig) -> SimReport:
    """x ~ N(0, 1), y ~ N(0, sigma^2), plus tau above the cutoff at 0."""
    if config.design != "rd_total_random":
        raise ConfigError(f"rd_total_random_sim got design {config.design!r}")
    variants = config.variants or ("gp_rd",)
    settings = list(itertools.product(config.taus, config.sigmas))
    reps = _run_reps(_total_random_rep, config, settings, variants)
    report = SimReport("rd_total_random", provenance=_provenance(config))
    for i, (tau, sigma) in enumerate(settings):
        for j, v in enumerate(variants):
            report.rows.append(_summary_row({"n": config.n, "tau": tau, "sigma": sigma}, v,
                                            [r[i][j] for r in reps], tau))
    if config.keep_replications:
        report.replications = reps
    return report


# -- RD: latent confounder -----------------------------------------------------

def latent_rd_data(rng, n, steepness, noise, effect=TRUE_EFFECT):
    """Vote share ``x = sigmoid(s * mu)`` with ``mu ~ U(-0.25, 0.25)``; win if x > 0.5."""
    mu = rng.uniform(-0.25, 0.25, n)
    e = rng.normal(0.0, 1.0, n)
    x = 1.0 / (1.0 + np.exp(-steepness * mu))
    d = (x > 0.5).astype(float)
    return Dataset(x, 1.5 * mu + effect * d + noise * e)


def _latent_rep(config, rep, settings, variants, trim):
    out = []
    for s, noise in settings:
        rng = rep_rng(config.seed, rep)
        data = latent_rd_data(rng, config.n, s, noise)
        out.append([_safe_rd(data, 0.5, v, config, trim) for v in variants])
    return out


def rd_latent_sim(config: SimConfig) -> SimReport:
    """Latent-sigmoid RD with true effect 3 at cutoff 0.5."""
    if config.design != "rd_latent":
        raise ConfigError(f"rd_latent_sim got design {config.design!r}")
    variants = config.variants or RD_VARIANTS
    settings = list(itertools.product(config.steepness, config.noise))
    trim = config.trim or (0.4, 0.6)
    reps = _run_reps(_latent_rep, config, settings, variants, trim)
    report = SimReport("rd_latent", provenance=_provenance(config))
    for i, (s, noise) in enumerate(settings):
        for j, v in enumerate(variants):
            report.rows.append(_summary_row({"n": config.n, "steepness": s, "noise": noise}, v,
                                            [r[i][j] for r in reps], TRUE_EFFECT))
    if config.keep_replications:
        report.replications = reps
    return report


# -- RD: placebo cutoffs with subsampling ---------------------------------------

def placebo_eligible(x: np.ndarray, cutoff: float, true_cutoff: float, window: float) -> np.ndarray:
    """Row indices usable at ``cutoff``: one side of the true cutoff only, within the window."""
    if cutoff < true_cutoff:
        side = x < true_cutoff
    elif cutoff > true_cutoff:
        side = x >= true_cutoff
    else:
        side = np.ones_like(x, dtype=bool)
    keep = side & (x > cutoff - window) & (x < cutoff + window)
    return np.flatnonzero(keep)


def _placebo_rep(config, rep, data, cutoffs, eligible, variants, trim_for):
    rng = rep_rng(config.seed, rep)
    out = []
    for c in cutoffs:
        rows = eligible[c]
        if config.subsample < rows.size:
            rows = np.sort(rng.choice(rows, size=config.subsample, replace=False))
        sub = data.subset(rows)
        out.append([_safe_rd(sub, c, v, config, trim_for(c)) for v in variants])
    return out


def rd_placebo_subsample(data: Dataset, config: SimConfig) -> SimReport:
    """Repeatedly subsample near each (placebo) cutoff and re-estimate.

    The target is ``config.truth`` when given, otherwise each variant's
    estimate on the whole eligible sample at that cutoff.
    """
    if config.design != "rd_placebo_subsample":
        raise ConfigError(f"rd_placebo_subsample got design {config.design!r}")
    if data.d != 1:
        raise InputError("placebo subsampling needs a single running variable")
    variants = config.variants or ("gp_rd", "gp_causal_trim")
    x = data.X[:, 0]
    cutoffs = list(config.cutoffs)
    eligible = {c: placebo_eligible(x, c, config.true_cutoff, config.window) for c in cutoffs}

    def trim_for(c):
        return None if config.trim is None else (c + config.trim[0], c + config.trim[1])

    targets = {}
    for c in cutoffs:
        full = data.subset(eligible[c])
        for v in variants:
            if config.truth is not None:
                targets[c, v] = float(config.truth)
            else:
                r = _safe_rd(full, c, v, config, trim_for(c))
                targets[c, v] = float("nan") if r is None else r[0]

    reps = _run_reps(_placebo_rep, config, data, cutoffs, eligible, variants, trim_for)
    report = SimReport("rd_placebo_subsample", provenance=_provenance(config))
    for i, c in enumerate(cutoffs):
        for j, v in enumerate(variants):
            setting = {"cutoff": c, "placebo": c != config.true_cutoff,
                       "n_eligible": int(eligible[c].size), "subsample": min(config.subsample, int(eligible[c].size))}
            report.rows.append(_summary_row(setting, v, [r[i][j] for r in reps], targets[c, v]))
    if config.keep_replications:
        report.replications = reps
    return report


def null_running_data(rng: np.random.Generator, n: int, sigma: float = 1.0) -> Dataset:
    """Running variable uniform on [0, 1] and an unrelated outcome."""
    return Dataset(rng.uniform(0.0, 1.0, n), rng.normal(0.0, sigma, n))


def run_simulation(config: SimConfig, data: Dataset | None = None) -> SimReport:
    """Dispatch on ``config.design``. Placebo runs without data use a null sample."""
    if config.design == "overlap":
        return overlap_sim(config)
    if config.design == "rd_total_random":
        return rd_total_random_sim(config)
    if config.design == "rd_latent":
        return rd_latent_sim(config)
    if data is None:
        data = null_running_data(rep_rng(config.seed, DATA_STREAM), config.n)
    return rd_placebo_subsample(data, config)
