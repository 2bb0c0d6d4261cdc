"""Causal estimators built on separate GP fits.

* T-learner CATE / ATE / ATT / ATC for treated-vs-control comparisons,
* interrupted time series: fit on the pre-period, extrapolate Y(0),
* sharp regression discontinuity with three GP variants.

Separately fitted models share no data or parameters, so their posteriors
are combined as independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError, InsufficientDataError
from .gp_core import Dataset, FittedGP, fit, posterior, z_value
from .kernels import Gaussian, Kernel, Linear, Periodic, Sum

__all__ = [
    "CateEstimate",
    "AteEstimate",
    "ItsResult",
    "RdResult",
    "RD_VARIANTS",
    "fit_arms",
    "t_learner_cate",
    "t_learner_ate",
    "contrast_average",
    "its_estimate",
    "default_its_kernel",
    "rd_estimate",
    "bandwidth_from_correlation",
]

RD_VARIANTS = ("gp_rd", "gp_causal", "gp_causal_trim")
VOTE_SHARE_BANDWIDTH = 0.005


@dataclass(frozen=True)
class CateEstimate:
    grid: np.ndarray
    tau: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    level: float = 0.95


@dataclass(frozen=True)
class AteEstimate:
    estimand: str
    estimate: float
    se: float
    ci: tuple[float, float]
    n_used: int
    level: float = 0.95


@dataclass(frozen=True)
class ItsResult:
    post_times: np.ndarray
    observed: np.ndarray
    cf_mean: np.ndarray
    cf_pred_lower: np.ndarray
    cf_pred_upper: np.ndarray
    effect: np.ndarray
    effect_se: np.ndarray
    att_running: np.ndarray
    att_running_se: np.ndarray
    kernel: Kernel
    sigma2: float
    level: float = 0.95


@dataclass(frozen=True)
class RdResult:
    variant: str
    cutoff: float
    effect: float
    se: float
    ci: tuple[float, float]
    n_below: int
    n_above: int
    bandwidth_used: float
    trim_window: tuple[float, float] | None = None
    level: float = 0.95


def _as_grid(grid, d):
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None] if d == 1 else g[None, :]
    return g


def fit_arms(data: Dataset, kernel="auto") -> tuple[FittedGP, FittedGP]:
    """Fit (control, treated) models on the two treatment arms."""
    if data.treat is None:
        raise InputError("data has no treatment indicator")
    models = []
    for arm, label in ((0, "control"), (1, "treated")):
        rows = np.flatnonzero(data.treat == arm)
        if rows.size < 2:
            raise InsufficientDataError(f"{label} arm has {rows.size} observations; need at least 2")
        arm_data = data.subset(rows)
        if not np.std(arm_data.y) > 0:
            raise InsufficientDataError(f"{label} arm outcome has zero variance")
        models.append(fit(arm_data, kernel))
    return models[0], models[1]


def t_learner_cate(data: Dataset, grid, level: float = 0.95, kernel="auto", models=None) -> CateEstimate:
    """tau(x) = mu1(x) - mu0(x) with se(x) = sqrt(v1(x) + v0(x)) from CEF variances."""
    z = z_value(level)
    m0, m1 = models if models is not None else fit_arms(data, kernel)
    g = _as_grid(grid, data.d)
    if g.shape[1] == 1:
        order = np.argsort(g[:, 0], kind="stable")
        g = g[order]
    p0, p1 = posterior(m0, g), posterior(m1, g)
    tau = p1.mean - p0.mean
    se = np.sqrt(p1.cef_sd**2 + p0.cef_sd**2)
    return CateEstimate(
        grid=g[:, 0] if g.shape[1] == 1 else g,
        tau=tau,
        se=se,
        ci_lower=tau - z * se,
        ci_upper=tau + z * se,
        level=level,
    )


def contrast_average(observed, imputed_mean, imputed_cov, sign: float = 1.0):
    """Average of ``sign * (observed - imputed)`` and its se.

    Observed outcomes are treated as fixed; all uncertainty comes from the
    imputed counterfactuals' joint posterior covariance.
    """
    observed = np.asarray(observed, dtype=float)
    n = observed.shape[0]
    est = float(sign * np.mean(observed - imputed_mean))
    var = float(np.sum(imputed_cov)) / n**2
    return est, math.sqrt(max(var, 0.0))


def t_learner_ate(
    data: Dataset, estimand: str = "ATE", level: float = 0.95, kernel="auto", models=None
) -> AteEstimate:
    """ATE, ATT or ATC by imputing each unit's unobserved potential outcome."""
    estimand = estimand.upper()
    if estimand not in ("ATE", "ATT", "ATC"):
        raise ConfigError(f"estimand must be ATE, ATT or ATC, got {estimand!r}")
    z = z_value(level)
    m0, m1 = models if models is not None else fit_arms(data, kernel)
    treated = np.flatnonzero(data.treat == 1)
    control = np.flatnonzero(data.treat == 0)

    # treated units need Y(0) from the control model, and vice versa
    if estimand in ("ATT", "ATE"):
        p0 = posterior(m0, data.X[treated], want_cov=True)
        sum_t = float(np.sum(data.y[treated] - p0.mean))
        var_t = float(np.sum(p0.cef_cov))
    if estimand in ("ATC", "ATE"):
        p1 = posterior(m1, data.X[control], want_cov=True)
        sum_c = float(np.sum(p1.mean - data.y[control]))
        var_c = float(np.sum(p1.cef_cov))

    if estimand == "ATT":
        n_used = treated.size
        est, var = sum_t / n_used, var_t / n_used**2
    elif estimand == "ATC":
        n_used = control.size
        est, var = sum_c / n_used, var_c / n_used**2
    else:
        n_used = data.n
        est, var = (sum_t + sum_c) / n_used, (var_t + var_c) / n_used**2
    se = math.sqrt(max(var, 0.0))
    return AteEstimate(estimand, est, se, (est - z * se, est + z * se), int(n_used), level)


def default_its_kernel(period: float = 12.0) -> Sum:
    """Linear + periodic + Gaussian(auto), equal starting weights."""
    return Sum.equal(Linear(), Periodic(period), Gaussian(None))


def its_estimate(
    series: Dataset,
    t_treat: float,
    kernel: Kernel | str | None = None,
    level: float = 0.95,
    optimize_weights: bool = True,
    min_pre: int = 12,
) -> ItsResult:
    """Interrupted time series by imputing Y(0) after ``t_treat``.

    The model sees only rows with ``time < t_treat`` (so time is standardized
    with pre-period moments). Per-period effects carry predictive sds; the
    running ATT through each period uses the joint CEF covariance.
    """
    if series.time is None:
        raise InputError("series has no time index")
    t = series.time
    if np.any(np.diff(t) <= 0):
        raise InputError("time index must be strictly increasing")
    z_value(level)  # validate before fitting
    pre = t < t_treat
    if pre.sum() < min_pre:
        raise InsufficientDataError(f"pre-period has {int(pre.sum())} observations; need at least {min_pre}")
    post = ~pre
    if kernel is None:
        kernel = default_its_kernel()
    model = fit(Dataset(t[pre], series.y[pre]), kernel, optimize_weights=optimize_weights)
    post_t = t[post]
    p = posterior(model, post_t, want_cov=True)
    observed = series.y[post]
    effect = observed - p.mean
    k = np.arange(1, post_t.size + 1)
    att = np.cumsum(effect) / k
    cov_cums = np.array([np.sum(p.cef_cov[:j, :j]) for j in k]) if post_t.size else np.empty(0)
    att_se = np.sqrt(np.maximum(cov_cums, 0.0)) / k
    lower, upper = p.interval(level, "predictive")
    return ItsResult(
        post_times=post_t,
        observed=observed,
        cf_mean=p.mean,
        cf_pred_lower=lower,
        cf_pred_upper=upper,
        effect=effect,
        effect_se=p.pred_sd,
        att_running=att,
        att_running_se=att_se,
        kernel=model.kernel,
        sigma2=model.sigma2,
        level=level,
    )


def bandwidth_from_correlation(distance: float, correlation: float) -> float:
    """Gaussian bandwidth giving ``correlation`` between points ``distance`` apart."""
    if not 0 < correlation < 1:
        raise ConfigError(f"correlation must lie strictly between 0 and 1, got {correlation}")
    if not distance > 0:
        raise ConfigError(f"distance must be positive, got {distance}")
    return -(distance**2) / math.log(correlation)


def _side_fit(x, y, variant, bandwidth):
    data = Dataset(x, y)
    if variant == "gp_rd":
        return fit(data, "auto")
    return fit(data, Gaussian(bandwidth), scale_x=False)


def rd_estimate(
    data: Dataset,
    cutoff: float,
    variant: str = "gp_rd",
    bandwidth: float | None = None,
    trim_window: tuple[float, float] | None = None,
    level: float = 0.95,
    interval: str = "cef",
) -> RdResult:
    """Sharp RD effect as the gap between two one-sided GP predictions at the cutoff.

    ``gp_rd`` fits each side at full defaults. ``gp_causal`` fixes the Gaussian
    bandwidth in raw running-variable units (default 0.005, suited to vote
    shares) and does not rescale the running variable. ``gp_causal_trim``
    additionally keeps only ``trim_window`` (default cutoff +/- 0.1) before
    fitting. Points exactly at the cutoff count as above (treated).
    ``interval="predictive"`` uses predictive rather than CEF variances.
    """
    if variant not in RD_VARIANTS:
        raise ConfigError(f"variant must be one of {RD_VARIANTS}, got {variant!r}")
    if interval not in ("cef", "predictive"):
        raise ConfigError(f"interval must be 'cef' or 'predictive', got {interval!r}")
    z = z_value(level)
    x = data.X[:, 0] if data.d == 1 else None
    if x is None:
        raise InputError("RD needs a single running variable")
    y = data.y
    window = None
    if variant == "gp_causal_trim":
        window = tuple(trim_window) if trim_window is not None else (cutoff - 0.1, cutoff + 0.1)
        if not window[0] < cutoff < window[1]:
            raise ConfigError(f"trim window {window} must contain the cutoff {cutoff}")
        keep = (x >= window[0]) & (x <= window[1])
        x, y = x[keep], y[keep]
    if variant != "gp_rd":
        bandwidth = VOTE_SHARE_BANDWIDTH if bandwidth is None else float(bandwidth)

    below = x < cutoff
    above = ~below
    n_below, n_above = int(below.sum()), int(above.sum())
    for side, count in (("below", n_below), ("above", n_above)):
        if count < 2:
            raise InsufficientDataError(f"{count} observations {side} the cutoff; need at least 2")

    at = np.array([[cutoff]])
    m_lo = _side_fit(x[below], y[below], variant, bandwidth)
    m_hi = _side_fit(x[above], y[above], variant, bandwidth)
    p_lo, p_hi = posterior(m_lo, at), posterior(m_hi, at)
    sd_lo = p_lo.cef_sd[0] if interval == "cef" else p_lo.pred_sd[0]
    sd_hi = p_hi.cef_sd[0] if interval == "cef" else p_hi.pred_sd[0]
    effect = float(p_hi.mean[0] - p_lo.mean[0])
    se = math.sqrt(sd_lo**2 + sd_hi**2)
    if variant == "gp_rd":
        # the two sides pick their own bandwidths; report their mean in raw units
        bw = 0.5 * sum(m.kernel.bandwidth * m.x_sd[0] ** 2 for m in (m_lo, m_hi))
    else:
        bw = bandwidth
    return RdResult(
        variant=variant,
        cutoff=float(cutoff),
        effect=effect,
        se=se,
        ci=(effect - z * se, effect + z * se),
        n_below=n_below,
        n_above=n_above,
        bandwidth_used=float(bw),
        trim_window=window,
        level=level,
    )
