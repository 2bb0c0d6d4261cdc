"""Covariance functions, Gram matrices and outcome-free bandwidth selection.

Kernels are small frozen dataclasses. The vectorised ``cross`` methods are
what the GP code uses; :func:`evaluate` is a deliberately separate scalar
implementation so the two can be checked against each other.

A kernel can also be written as a short expression, e.g.::

    sum(gaussian(auto), periodic(period=12), linear)
    0.5*gaussian(b=2) + 0.5*linear

see :func:`parse_kernel`.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, ContractViolation, InputError, InsufficientDataError

__all__ = [
    "Gaussian",
    "Linear",
    "Periodic",
    "Polynomial",
    "Sum",
    "Kernel",
    "BANDWIDTH_POWERS",
    "evaluate",
    "gram",
    "cross_gram",
    "kernel_diag",
    "bandwidth_grid",
    "select_bandwidth",
    "resolve_bandwidth",
    "is_resolved",
    "parse_kernel",
    "format_kernel",
]

MAX_COMPONENTS = 3
BANDWIDTH_POWERS = np.arange(-6, 7)


def as_matrix(X, name="X") -> np.ndarray:
    """Return ``X`` as a finite float (n, d) array; 1-d input becomes a column."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ContractViolation(f"{name} must be 1-d or 2-d, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InputError(f"{name} contains non-finite entries")
    return X


@dataclass(frozen=True)
class Gaussian:
    """``exp(-||x - x'||^2 / b)``. ``bandwidth=None`` means pick it from X."""

    bandwidth: float | None = None

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ConfigError(f"Gaussian bandwidth must be positive, got {self.bandwidth}")

    def cross(self, X, X2):
        self._check()
        return np.exp(-cdist(X, X2, "sqeuclidean") / self.bandwidth)

    def diag(self, X):
        return np.ones(X.shape[0])

    def _check(self):
        if self.bandwidth is None:
            raise ConfigError("Gaussian bandwidth is 'auto'; resolve it before evaluating")


@dataclass(frozen=True)
class Linear:
    """Dot product ``x . x'``."""

    def cross(self, X, X2):
        return X @ X2.T

    def diag(self, X):
        return np.einsum("ij,ij->i", X, X)


@dataclass(frozen=True)
class Periodic:
    """``exp(-2 sin^2(pi ||x - x'|| / period) / lengthscale^2)``."""

    period: float
    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigError(f"period must be positive, got {self.period}")
        if not self.lengthscale > 0:
            raise ConfigError(f"lengthscale must be positive, got {self.lengthscale}")

    def cross(self, X, X2):
        r = cdist(X, X2, "euclidean")
        return np.exp(-2.0 * np.sin(np.pi * r / self.period) ** 2 / self.lengthscale**2)

    def diag(self, X):
        return np.ones(X.shape[0])


@dataclass(frozen=True)
class Polynomial:
    """``(x . x' + offset) ** degree``."""

    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 2:
            raise ConfigError(f"polynomial degree must be an integer >= 2, got {self.degree}")
        if not self.offset >= 0:
            raise ConfigError(f"polynomial offset must be nonnegative, got {self.offset}")

    def cross(self, X, X2):
        return (X @ X2.T + self.offset) ** int(self.degree)

    def diag(self, X):
        return (np.einsum("ij,ij->i", X, X) + self.offset) ** int(self.degree)


BaseKernel = Union[Gaussian, Linear, Periodic, Polynomial]


@dataclass(frozen=True)
class Sum:
    """Weighted sum of up to three distinct base kernels."""

    components: tuple = field(default_factory=tuple)

    def __post_init__(self):
        comps = tuple((float(w), k) for w, k in self.components)
        object.__setattr__(self, "components", comps)
        if not 1 <= len(comps) <= MAX_COMPONENTS:
            raise ConfigError(f"a sum kernel needs 1 to {MAX_COMPONENTS} components, got {len(comps)}")
        kinds = [type(k) for _, k in comps]
        if Sum in kinds:
            raise ConfigError("nested sum kernels are not supported")
        if len(set(kinds)) != len(kinds):
            raise ConfigError("a sum kernel may not repeat a base kernel")
        weights = [w for w, _ in comps]
        if any(not (w >= 0 and math.isfinite(w)) for w in weights) or not any(w > 0 for w in weights):
            raise ConfigError(f"sum weights must be nonnegative with one positive, got {weights}")

    @classmethod
    def equal(cls, *kernels) -> "Sum":
        m = len(kernels)
        return cls(tuple((1.0 / m, k) for k in kernels))

    @property
    def weights(self) -> tuple:
        return tuple(w for w, _ in self.components)

    @property
    def kernels(self) -> tuple:
        return tuple(k for _, k in self.components)

    def with_weights(self, weights) -> "Sum":
        return Sum(tuple(zip(weights, self.kernels)))

    def cross(self, X, X2):
        out = np.zeros((X.shape[0], X2.shape[0]))
        for w, k in self.components:
            if w > 0:
                out += w * k.cross(X, X2)
        return out

    def diag(self, X):
        out = np.zeros(X.shape[0])
        for w, k in self.components:
            if w > 0:
                out += w * k.diag(X)
        return out


Kernel = Union[Gaussian, Linear, Periodic, Polynomial, Sum]


def evaluate(kernel: Kernel, x, x2) -> float:
    """Covariance between two single points, computed one scalar at a time."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.ndim != 1 or x.shape != x2.shape:
        raise ContractViolation(f"points must be vectors of equal length, got {x.shape} and {x2.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(x2))):
        raise InputError("kernel inputs must be finite")
    a, b = x.tolist(), x2.tolist()
    if isinstance(kernel, Sum):
        return sum(w * evaluate(k, x, x2) for w, k in kernel.components)
    if isinstance(kernel, Gaussian):
        kernel._check()
        sq = sum((u - v) ** 2 for u, v in zip(a, b))
        return math.exp(-sq / kernel.bandwidth)
    if isinstance(kernel, Linear):
        return sum(u * v for u, v in zip(a, b))
    if isinstance(kernel, Periodic):
        r = math.sqrt(sum((u - v) ** 2 for u, v in zip(a, b)))
        return math.exp(-2.0 * math.sin(math.pi * r / kernel.period) ** 2 / kernel.lengthscale**2)
    if isinstance(kernel, Polynomial):
        return (sum(u * v for u, v in zip(a, b)) + kernel.offset) ** int(kernel.degree)
    raise TypeError(f"not a kernel: {kernel!r}")


def gram(kernel: Kernel, X) -> np.ndarray:
    """n x n matrix of pairwise covariances; exactly symmetric."""
    X = as_matrix(X)
    if X.shape[0] < 1:
        raise InsufficientDataError("gram needs at least one row")
    K = kernel.cross(X, X)
    return 0.5 * (K + K.T)


def cross_gram(kernel: Kernel, Xstar, X) -> np.ndarray:
    """m x n matrix whose (i, j) entry is k(Xstar_i, X_j)."""
    Xstar = as_matrix(Xstar, "Xstar")
    X = as_matrix(X)
    if Xstar.shape[1] != X.shape[1]:
        raise ContractViolation(f"dimension mismatch: {Xstar.shape[1]} vs {X.shape[1]} columns")
    return kernel.cross(Xstar, X)


def kernel_diag(kernel: Kernel, X) -> np.ndarray:
    return kernel.diag(as_matrix(X))


def bandwidth_grid(d: int) -> np.ndarray:
    return d * 2.0 ** BANDWIDTH_POWERS


# exact sorted-pair path below this many rows; chunked accumulation above
_EXACT_PAIR_LIMIT = 2000


def _offdiag_variances(X: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Sample variance (ddof=1) of all n(n-1) off-diagonal entries, per bandwidth."""
    n = X.shape[0]
    m = n * (n - 1)  # each unordered pair appears twice off the diagonal
    if n <= _EXACT_PAIR_LIMIT:
        # sorting makes the result independent of row order, bit for bit
        sq = np.sort(pdist(X, "sqeuclidean"))
        return np.array([np.var(np.exp(-sq / b)) for b in grid]) * m / (m - 1)
    total = np.zeros(len(grid))
    total_sq = np.zeros(len(grid))
    count = 0
    for start in range(0, n, 512):
        block = cdist(X[start : start + 512], X, "sqeuclidean")
        rows = np.arange(start, min(start + 512, n))
        mask = np.arange(n)[None, :] > rows[:, None]
        sq = block[mask]
        count += sq.size
        for i, b in enumerate(grid):
            vals = np.exp(-sq / b)
            total[i] += vals.sum()
            total_sq[i] += (vals**2).sum()
    mean = total / count
    return (total_sq / count - mean**2) * m / (m - 1)


def select_bandwidth(X) -> float:
    """Gaussian bandwidth maximising the variance of the off-diagonal Gram entries.

    Searches ``d * 2**k`` for k in -6..6 on the standardized covariates;
    the outcome is never consulted. Ties go to the smallest bandwidth.
    """
    X = as_matrix(X)
    n, d = X.shape
    if n < 2:
        raise InsufficientDataError(f"bandwidth selection needs at least 2 rows, got {n}")
    grid = bandwidth_grid(d)
    variances = _offdiag_variances(X, grid)
    return float(grid[int(np.argmax(variances))])


def is_resolved(kernel: Kernel) -> bool:
    if isinstance(kernel, Sum):
        return all(is_resolved(k) for k in kernel.kernels)
    return not (isinstance(kernel, Gaussian) and kernel.bandwidth is None)


def resolve_bandwidth(kernel: Kernel, Xs) -> Kernel:
    """Fill any ``auto`` Gaussian bandwidth from the (standardized) covariates."""
    if is_resolved(kernel):
        return kernel
    b = select_bandwidth(Xs)
    if isinstance(kernel, Gaussian):
        return Gaussian(b)
    return Sum(
        tuple(
            (w, Gaussian(b) if isinstance(k, Gaussian) and k.bandwidth is None else k)
            for w, k in kernel.components
        )
    )


def rescale_periods(kernel: Kernel, scale: float) -> Kernel:
    """Express raw-unit periods in units of ``scale`` (the covariate sd)."""
    if isinstance(kernel, Periodic):
        return replace(kernel, period=kernel.period / scale)
    if isinstance(kernel, Sum):
        return Sum(tuple((w, rescale_periods(k, scale)) for w, k in kernel.components))
    return kernel


def has_periodic(kernel: Kernel) -> bool:
    if isinstance(kernel, Sum):
        return any(isinstance(k, Periodic) for k in kernel.kernels)
    return isinstance(kernel, Periodic)


# -- expression grammar ------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[(),=*+]))")

_ALIASES = {"gaussian": "gaussian", "rbf": "gaussian", "se": "gaussian", "linear": "linear",
            "periodic": "periodic", "polynomial": "polynomial", "poly": "polynomial",
            "quadratic": "quadratic", "sum": "sum"}


def _tokenize(text: str) -> list:
    tokens, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ConfigError(f"cannot parse kernel expression at {text[pos:]!r}")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind)))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self, value=None):
        tok = self.peek()
        if tok[0] is None or (value is not None and tok[1] != value):
            raise ConfigError(f"bad kernel expression {self.text!r}: expected {value or 'token'}")
        self.i += 1
        return tok

    def parse(self):
        terms = [self.term()]
        while self.peek()[1] == "+":
            self.take("+")
            terms.append(self.term())
        if self.peek()[0] is not None:
            raise ConfigError(f"trailing input in kernel expression {self.text!r}")
        return _combine(terms)

    def term(self):
        weight = None
        if self.peek()[0] == "num":
            weight = float(self.take()[1])
            self.take("*")
        kind, name = self.take()
        if kind != "name" or name.lower() not in _ALIASES:
            raise ConfigError(f"unknown kernel {name!r}")
        name = _ALIASES[name.lower()]
        args, kwargs = [], {}
        if self.peek()[1] == "(":
            self.take("(")
            while self.peek()[1] != ")":
                if name == "sum":
                    args.append(self.term())
                else:
                    kind, val = self.take()
                    if kind == "name" and self.peek()[1] == "=":
                        self.take("=")
                        kwargs[val.lower()] = self._value()
                    elif kind == "num":
                        args.append(float(val))
                    elif kind == "name":
                        args.append(val.lower())
                    else:
                        raise ConfigError(f"unexpected {val!r} in kernel expression")
                if self.peek()[1] == ",":
                    self.take(",")
                elif self.peek()[1] != ")":
                    raise ConfigError(f"expected ',' or ')' in kernel expression {self.text!r}")
            self.take(")")
        return weight, _build(name, args, kwargs)

    def _value(self):
        kind, val = self.take()
        return float(val) if kind == "num" else val.lower()


def _build(name, args, kwargs):
    def pick(key, pos, default=None):
        if key in kwargs:
            return kwargs.pop(key)
        if len(args) > pos:
            return args[pos]
        return default

    if name == "sum":
        return ("sum", args)
    if name == "gaussian":
        b = pick("b", 0, "auto")
        if "bandwidth" in kwargs:
            b = kwargs.pop("bandwidth")
        k = Gaussian(None if b == "auto" else float(b))
    elif name == "linear":
        k = Linear()
    elif name == "periodic":
        p = pick("period", 0)
        if p is None:
            raise ConfigError("periodic kernel needs a period")
        k = Periodic(float(p), float(pick("lengthscale", 1, 1.0)))
    elif name in ("polynomial", "quadratic"):
        deg = 2 if name == "quadratic" else pick("degree", 0, 2)
        off = pick("offset", 0 if name == "quadratic" else 1, 1.0)
        k = Polynomial(int(float(deg)), float(off))
    else:  # pragma: no cover
        raise ConfigError(name)
    if kwargs:
        raise ConfigError(f"unknown arguments for {name}: {sorted(kwargs)}")
    return k


def _combine(terms):
    flat = []
    for weight, k in terms:
        if isinstance(k, tuple) and k[0] == "sum":
            if weight is not None:
                raise ConfigError("weights apply to base kernels only")
            flat.extend(k[1])
        else:
            flat.append((weight, k))
    if len(flat) == 1 and flat[0][0] is None:
        return flat[0][1]
    m = len(flat)
    if any(isinstance(k, tuple) for _, k in flat):
        raise ConfigError("nested sum kernels are not supported")
    if all(w is None for w, _ in flat):
        return Sum(tuple((1.0 / m, k) for _, k in flat))
    if any(w is None for w, _ in flat):
        raise ConfigError("give a weight for every component or for none")
    return Sum(tuple(flat))


def parse_kernel(text: str) -> Kernel:
    """Parse a kernel expression such as ``sum(gaussian(auto), linear)``.

    Unweighted sums get equal weights. ``gaussian`` with no argument is
    ``gaussian(auto)``.
    """
    return _Parser(text).parse()


def _fmt(x: float) -> str:
    return repr(float(x))


def format_kernel(kernel: Kernel) -> str:
    """Inverse of :func:`parse_kernel` (weights always written out for sums)."""
    if isinstance(kernel, Sum):
        return " + ".join(f"{_fmt(w)}*{format_kernel(k)}" for w, k in kernel.components)
    if isinstance(kernel, Gaussian):
        return "gaussian(auto)" if kernel.bandwidth is None else f"gaussian(b={_fmt(kernel.bandwidth)})"
    if isinstance(kernel, Linear):
        return "linear"
    if isinstance(kernel, Periodic):
        return f"periodic(period={_fmt(kernel.period)}, lengthscale={_fmt(kernel.lengthscale)})"
    if isinstance(kernel, Polynomial):
        return f"polynomial(degree={int(kernel.degree)}, offset={_fmt(kernel.offset)})"
    raise TypeError(f"not a kernel: {kernel!r}")
