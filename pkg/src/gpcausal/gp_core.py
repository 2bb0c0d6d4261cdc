"""Exact GP regression with standardized data and a likelihood-chosen noise level.

Both covariates and outcome are centred and scaled to unit (n-1) variance,
so the prior mean is 0, the prior signal variance is 1 and the single free
parameter ``sigma2`` reads as the share of outcome variance the covariates
do not explain. It is picked by maximising the log marginal likelihood.
Everything else (mean, CEF covariance, predictive variance) is closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.stats import norm

from .errors import (
    ContractViolation,
    DegenerateInputError,
    InputError,
    InsufficientDataError,
    NumericalError,
)
from .kernels import (
    Gaussian,
    Kernel,
    Sum,
    as_matrix,
    cross_gram,
    gram,
    has_periodic,
    kernel_diag,
    parse_kernel,
    rescale_periods,
    resolve_bandwidth,
)

SIGMA2_BOUNDS = (1e-6, 2.0)
SIGMA2_TOL = 1e-5  # in log(sigma2)
JITTER_START = 1e-8
JITTER_MAX = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class Dataset:
    """Raw observations. ``treat`` and ``time`` are optional per-row vectors."""

    X: np.ndarray
    y: np.ndarray
    treat: np.ndarray | None = None
    time: np.ndarray | None = None
    names: tuple = ()

    def __post_init__(self):
        X = as_matrix(self.X)
        y = np.asarray(self.y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise ContractViolation(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all(np.isfinite(y)):
            raise InputError("y contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.treat is not None:
            d = np.asarray(self.treat, dtype=float).ravel()
            if d.shape != y.shape or not np.all((d == 0) | (d == 1)):
                raise InputError("treatment indicator must be a 0/1 vector with one entry per row")
            object.__setattr__(self, "treat", d.astype(int))
        if self.time is not None:
            t = np.asarray(self.time, dtype=float).ravel()
            if t.shape != y.shape or not np.all(np.isfinite(t)):
                raise InputError("time index must be finite with one entry per row")
            object.__setattr__(self, "time", t)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            self.X[rows],
            self.y[rows],
            None if self.treat is None else self.treat[rows],
            None if self.time is None else self.time[rows],
            self.names,
        )


@dataclass(frozen=True)
class StandardizedDataset:
    Xs: np.ndarray
    ys: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float

    def to_standard_x(self, X) -> np.ndarray:
        return (as_matrix(X) - self.x_mean) / self.x_sd


def standardize(data: Dataset, scale_x: bool = True) -> StandardizedDataset:
    """Centre and scale X and y to unit sample variance (n - 1 denominator).

    With ``scale_x=False`` the covariates pass through untouched (identity
    transform); the outcome is always standardized.
    """
    n = data.n
    if n < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {n}")
    y_mean = float(np.mean(data.y))
    y_sd = float(np.std(data.y, ddof=1))
    if not y_sd > 0:
        raise DegenerateInputError("outcome has zero variance")
    if scale_x:
        x_mean = data.X.mean(axis=0)
        x_sd = data.X.std(axis=0, ddof=1)
        for j, s in enumerate(x_sd):
            if not s > 0:
                name = data.names[j] if j < len(data.names) else f"column {j}"
                raise DegenerateInputError(f"covariate {name!r} has zero variance")
    else:
        x_mean = np.zeros(data.d)
        x_sd = np.ones(data.d)
    return StandardizedDataset(
        Xs=(data.X - x_mean) / x_sd,
        ys=(data.y - y_mean) / y_sd,
        x_mean=x_mean,
        x_sd=x_sd,
        y_mean=y_mean,
        y_sd=y_sd,
    )


def jittered_cholesky(A: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``A``, adding 1e-8..1e-4 to the diagonal if needed.

    Returns the factor and the jitter actually used (0.0 when none).
    """
    jitter = 0.0
    eye = np.eye(A.shape[0])
    while True:
        try:
            return linalg.cholesky(A + jitter * eye, lower=True, check_finite=False), jitter
        except linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise NumericalError("Cholesky factorization failed even with 1e-4 jitter") from None


def log_marginal_likelihood(K, ys, sigma2: float) -> float:
    """``-y'(K + s2 I)^-1 y / 2 - log|K + s2 I| / 2 - n log(2 pi) / 2`` via Cholesky."""
    K = np.asarray(K, dtype=float)
    ys = np.asarray(ys, dtype=float).ravel()
    n = ys.shape[0]
    if K.shape != (n, n):
        raise ContractViolation(f"K has shape {K.shape} but y has length {n}")
    if not sigma2 > 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    L, _ = jittered_cholesky(K + sigma2 * np.eye(n))
    return _lml_from_factor(L, ys)


def _lml_from_factor(L, ys):
    z = linalg.solve_triangular(L, ys, lower=True, check_finite=False)
    return float(-0.5 * z @ z - np.sum(np.log(np.diag(L))) - 0.5 * ys.shape[0] * _LOG_2PI)


def golden_section_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Maximise a unimodal ``f`` on [lo, hi]; endpoints are also checked."""
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    best_x, best_f = (x1, f1) if f1 >= f2 else (x2, f2)
    for x in (lo, hi):
        fx = f(x)
        if fx > best_f:
            best_x, best_f = x, fx
    return best_x, best_f


def optimize_sigma2(K, ys, bounds=SIGMA2_BOUNDS, tol=SIGMA2_TOL) -> tuple[float, float]:
    """Golden-section search for sigma2 on a log scale. Returns (sigma2, lml)."""
    n = ys.shape[0]
    eye = np.eye(n)

    def objective(log_s2):
        L, _ = jittered_cholesky(K + math.exp(log_s2) * eye)
        return _lml_from_factor(L, ys)

    log_s2, lml = golden_section_max(objective, math.log(bounds[0]), math.log(bounds[1]), tol)
    return math.exp(log_s2), lml


def simplex_grid(m: int, step: float = 0.1) -> list[tuple]:
    """All weight vectors of length m on the ``step`` lattice that sum to one."""
    k = int(round(1.0 / step))
    out = []
    for combo in itertools.product(range(k + 1), repeat=m):
        if sum(combo) == k:
            out.append(tuple(c / k for c in combo))
    return out


@dataclass(frozen=True)
class FittedGP:
    """A trained model. Everything is stored in standardized units."""

    kernel: Kernel
    sigma2: float
    X_train: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    x_mean: np.ndarray
    x_sd: np.ndarray
    y_mean: float
    y_sd: float
    lml: float
    jitter: float = 0.0
    scale_x: bool = True
    y_train: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.X_train.shape[0]

    @property
    def d(self) -> int:
        return self.X_train.shape[1]


def _as_kernel(kernel) -> Kernel:
    if kernel is None or (isinstance(kernel, str) and kernel.strip().lower() == "auto"):
        return Gaussian(None)
    if isinstance(kernel, str):
        return parse_kernel(kernel)
    return kernel


def fit(
    data: Dataset,
    kernel: Kernel | str | None = "auto",
    *,
    sigma2: float | None = None,
    scale_x: bool = True,
    optimize_weights: bool = False,
    bounds: tuple[float, float] = SIGMA2_BOUNDS,
) -> FittedGP:
    """Fit a GP to ``data``.

    Parameters
    ----------
    data : Dataset
    kernel : Kernel, expression string or "auto"
        "auto" is a Gaussian kernel whose bandwidth is chosen from X alone.
        Raw-unit periods of periodic components are converted to
        standardized units (1-d covariates only).
    sigma2 : float, optional
        Fix the noise level instead of maximising the marginal likelihood.
    scale_x : bool
        If False the covariates are used as given, so fixed bandwidths are in
        raw units.
    optimize_weights : bool
        For sum kernels, choose weights on a 0.1 simplex lattice jointly with
        sigma2 by marginal likelihood. Otherwise the given weights are kept.
    """
    std = standardize(data, scale_x=scale_x)
    k = _as_kernel(kernel)
    if scale_x and has_periodic(k):
        if data.d != 1:
            raise ContractViolation("periodic kernels need a single (time) covariate")
        k = rescale_periods(k, float(std.x_sd[0]))
    k = resolve_bandwidth(k, std.Xs)
    ys = std.ys
    n = ys.shape[0]

    if optimize_weights and isinstance(k, Sum) and len(k.components) > 1:
        parts = [gram(c, std.Xs) for c in k.kernels]
        best = None
        for w in simplex_grid(len(parts)):
            K = sum(wi * G for wi, G in zip(w, parts) if wi > 0)
            if sigma2 is None:
                s2, lml = optimize_sigma2(K, ys, bounds)
            else:
                s2, lml = sigma2, log_marginal_likelihood(K, ys, sigma2)
            if best is None or lml > best[2]:
                best = (w, s2, lml)
        k = k.with_weights(best[0])
        sigma2 = best[1]

    K = gram(k, std.Xs)
    if sigma2 is None:
        sigma2, _ = optimize_sigma2(K, ys, bounds)
    elif not sigma2 > 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    L, jitter = jittered_cholesky(K + sigma2 * np.eye(n))
    alpha = linalg.cho_solve((L, True), ys, check_finite=False)
    return FittedGP(
        kernel=k,
        sigma2=float(sigma2),
        X_train=std.Xs,
        chol=L,
        alpha=alpha,
        x_mean=std.x_mean,
        x_sd=std.x_sd,
        y_mean=std.y_mean,
        y_sd=std.y_sd,
        lml=_lml_from_factor(L, ys),
        jitter=jitter,
        scale_x=scale_x,
        y_train=ys,
    )


@dataclass(frozen=True)
class PosteriorPrediction:
    """Posterior summaries at m test points (original outcome units unless noted)."""

    mean: np.ndarray
    cef_sd: np.ndarray
    pred_sd: np.ndarray
    cef_cov: np.ndarray | None = None

    def interval(self, level: float = 0.95, kind: str = "cef") -> tuple[np.ndarray, np.ndarray]:
        if kind not in ("cef", "predictive"):
            raise ValueError(f"kind must be 'cef' or 'predictive', got {kind!r}")
        sd = self.cef_sd if kind == "cef" else self.pred_sd
        z = norm.ppf(0.5 + level / 2.0)
        return self.mean - z * sd, self.mean + z * sd


def _clip_variance(var, prior):
    tol = 1e-8 * np.maximum(1.0, np.abs(prior))
    if np.any(var < -tol):
        raise NumericalError(f"posterior variance {var.min():.3g} is negative beyond round-off")
    return np.maximum(var, 0.0)


def posterior(
    model: FittedGP, Xstar, want_cov: bool = False, standardized: bool = False
) -> PosteriorPrediction:
    """Posterior mean, CEF sd and predictive sd at the rows of ``Xstar``.

    ``Xstar`` is in raw covariate units. ``standardized=True`` reports the
    outcome-side quantities in standardized units instead.
    """
    Xstar = np.asarray(Xstar, dtype=float)
    if Xstar.ndim == 1 and model.d == 1:
        Xstar = Xstar[:, None]
    if Xstar.ndim == 1 and Xstar.size == 0:
        Xstar = Xstar.reshape(0, model.d)
    Xstar = as_matrix(Xstar, "Xstar")
    if Xstar.shape[1] != model.d:
        raise ContractViolation(f"Xstar has {Xstar.shape[1]} columns, model expects {model.d}")
    m = Xstar.shape[0]
    if m == 0:
        empty = np.empty(0)
        return PosteriorPrediction(empty, empty, empty, np.empty((0, 0)) if want_cov else None)

    Xs = (Xstar - model.x_mean) / model.x_sd
    Ks = cross_gram(model.kernel, Xs, model.X_train)
    mean = Ks @ model.alpha
    V = linalg.solve_triangular(model.chol, Ks.T, lower=True, check_finite=False)
    prior = kernel_diag(model.kernel, Xs)
    var = _clip_variance(prior - np.einsum("ij,ij->j", V, V), prior)
    cov = None
    if want_cov:
        cov = gram(model.kernel, Xs) - V.T @ V
        cov = 0.5 * (cov + cov.T)
        cov[np.diag_indices(m)] = var

    scale = 1.0 if standardized else model.y_sd
    shift = 0.0 if standardized else model.y_mean
    return PosteriorPrediction(
        mean=mean * scale + shift,
        cef_sd=np.sqrt(var) * scale,
        pred_sd=np.sqrt(var + model.sigma2) * scale,
        cef_cov=None if cov is None else cov * scale**2,
    )


def cef_at(model: FittedGP, Xstar, standardized: bool = False):
    """Mean, CEF sd and full CEF covariance (noise excluded)."""
    p = posterior(model, Xstar, want_cov=True, standardized=standardized)
    return p.mean, p.cef_sd, p.cef_cov


def z_value(level: float) -> float:
    if not 0 < level < 1:
        raise InputError(f"confidence level must be in (0, 1), got {level}")
    return float(norm.ppf(0.5 + level / 2.0))
