"""CSV ingestion, model persistence and JSON/CSV report writing.

Output files are a pure function of their inputs (no timestamps, fixed key
order, fixed number formatting) so identical runs give identical bytes.
JSON is ``{"meta": {...}, "results": [...]}``; CSV is one flat row per
result record with numbers written to 17 significant digits.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, InputError, InsufficientDataError
from .estimators import AteEstimate, CateEstimate, ItsResult, RdResult
from .gp_core import Dataset, FittedGP, PosteriorPrediction
from .kernels import format_kernel, parse_kernel
from .simulations import SimReport

log = logging.getLogger(__name__)

_YEAR_MONTH = re.compile(r"^(\d{4})-(\d{1,2})(?:-\d{1,2})?$")


@dataclass(frozen=True)
class ColumnBindings:
    """Which CSV columns play which role."""

    outcome: str
    covariates: tuple = ()
    treatment: str | None = None
    running: str | None = None
    time: str | None = None

    def columns(self) -> list[str]:
        cols = [self.outcome, *self.covariates]
        for c in (self.treatment, self.running, self.time):
            if c is not None and c not in cols:
                cols.append(c)
        return cols

    def x_columns(self) -> list[str]:
        if self.covariates:
            return list(self.covariates)
        if self.running is not None:
            return [self.running]
        if self.time is not None:
            return [self.time]
        raise ConfigError("no covariate, running or time column given")


@dataclass(frozen=True)
class PlotSeries:
    """A mean curve with a band, ready for plotting."""

    name: str
    x: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("cef", "predictive", "cate", "effect"):
            raise ValueError(f"unknown series kind {self.kind!r}")
        arrays = [np.asarray(a, dtype=float) for a in (self.x, self.mean, self.lower, self.upper)]
        if len({a.shape for a in arrays}) != 1:
            raise ValueError("PlotSeries arrays must have equal lengths")
        if np.any(arrays[2] > arrays[1]) or np.any(arrays[1] > arrays[3]):
            raise ValueError("PlotSeries bands must satisfy lower <= mean <= upper")
        for name, a in zip(("x", "mean", "lower", "upper"), arrays):
            object.__setattr__(self, name, a)

    @classmethod
    def from_posterior(cls, name, x, pred: PosteriorPrediction, kind: str, level=0.95) -> "PlotSeries":
        lo, hi = pred.interval(level, "cef" if kind == "cef" else "predictive")
        return cls(name, np.asarray(x, dtype=float), pred.mean, lo, hi, kind)


def parse_time_value(text: str) -> float:
    """Integer time index, or ISO year-month converted to ``12 * year + month - 1``."""
    m = _YEAR_MONTH.match(text.strip())
    if m:
        month = int(m.group(2))
        if not 1 <= month <= 12:
            raise ValueError(f"bad month in {text!r}")
        return float(12 * int(m.group(1)) + month - 1)
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"fractional time {text!r} is not supported")
    return value


def read_csv(path, bindings: ColumnBindings) -> tuple[Dataset, int]:
    """Load the bound columns of a UTF-8 CSV file.

    Rows with an empty cell in any bound column are dropped; the count is
    returned alongside the dataset and logged.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"input file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InsufficientDataError(f"{path} is empty") from None
        wanted = bindings.columns()
        missing = [c for c in wanted if c not in header]
        if missing:
            raise InputError(f"column(s) {missing} not found in {path}; header is {header}")
        idx = {c: header.index(c) for c in wanted}
        values = {c: [] for c in wanted}
        dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            cells = {c: (row[i].strip() if i < len(row) else "") for c, i in idx.items()}
            if any(v == "" for v in cells.values()):
                dropped += 1
                continue
            for c, text in cells.items():
                try:
                    v = parse_time_value(text) if c == bindings.time else float(text)
                except ValueError:
                    raise InputError(f"{path}: row {lineno}, column {c!r}: cannot parse {text!r}") from None
                if not math.isfinite(v):
                    raise InputError(f"{path}: row {lineno}, column {c!r}: non-finite value {text!r}")
                values[c].append(v)
    n = len(values[bindings.outcome])
    if dropped:
        log.warning("dropped %d row(s) with missing values", dropped)
    if n == 0:
        raise InsufficientDataError(f"{path} has no complete rows")
    xcols = bindings.x_columns()
    X = np.column_stack([values[c] for c in xcols])
    data = Dataset(
        X,
        values[bindings.outcome],
        treat=values[bindings.treatment] if bindings.treatment else None,
        time=values[bindings.time] if bindings.time else None,
        names=tuple(xcols),
    )
    return data, dropped


def fmt_number(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv_rows(rows: list[dict], path) -> None:
    columns: list[str] = []
    for r in rows:
        for k in r:
            if k not in columns:
                columns.append(k)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([fmt_number(r.get(c)) for c in columns])


def write_dataset_csv(data: Dataset, bindings: ColumnBindings, path) -> None:
    """Write the bound columns back out (inverse of :func:`read_csv`)."""
    rows = []
    xcols = bindings.x_columns()
    for i in range(data.n):
        r = {bindings.outcome: float(data.y[i])}
        for j, c in enumerate(xcols):
            r[c] = float(data.X[i, j])
        if bindings.treatment:
            r[bindings.treatment] = int(data.treat[i])
        if bindings.time and bindings.time not in r:
            r[bindings.time] = float(data.time[i])
        rows.append(r)
    write_csv_rows(rows, path)


# -- records -------------------------------------------------------------------

def _plain(v):
    """Numpy/tuple values to JSON-ready Python; NaN becomes None."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return None if math.isnan(v) else v
    return v


def to_records(obj) -> list[dict]:
    """Flatten a result object into CSV-ready rows (one per setting or grid point)."""
    if isinstance(obj, SimReport):
        return [dict(r) for r in obj.rows]
    if isinstance(obj, RdResult):
        d = dataclasses.asdict(obj)
        lo, hi = d.pop("ci")
        tw = d.pop("trim_window")
        d.update(ci_lower=lo, ci_upper=hi,
                 trim_lower=None if tw is None else tw[0], trim_upper=None if tw is None else tw[1])
        return [d]
    if isinstance(obj, AteEstimate):
        d = dataclasses.asdict(obj)
        lo, hi = d.pop("ci")
        d.update(ci_lower=lo, ci_upper=hi)
        return [d]
    if isinstance(obj, CateEstimate):
        return [{"x": float(x), "tau": float(t), "se": float(s), "ci_lower": float(lo), "ci_upper": float(hi)}
                for x, t, s, lo, hi in zip(obj.grid, obj.tau, obj.se, obj.ci_lower, obj.ci_upper)]
    if isinstance(obj, ItsResult):
        cols = ("post_times", "observed", "cf_mean", "cf_pred_lower", "cf_pred_upper",
                "effect", "effect_se", "att_running", "att_running_se")
        return [{("time" if c == "post_times" else c): float(getattr(obj, c)[i]) for c in cols}
                for i in range(obj.post_times.size)]
    if isinstance(obj, PlotSeries):
        return [{"name": obj.name, "kind": obj.kind, "x": float(a), "mean": float(b),
                 "lower": float(c), "upper": float(d)}
                for a, b, c, d in zip(obj.x, obj.mean, obj.lower, obj.upper)]
    if isinstance(obj, (list, tuple)):
        return [r for item in obj for r in to_records(item)]
    if isinstance(obj, dict):
        return [obj]
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_results(obj) -> list:
    if isinstance(obj, (list, tuple)) and obj and isinstance(obj[0], PlotSeries):
        return [{"name": s.name, "kind": s.kind, "x": s.x, "mean": s.mean, "lower": s.lower, "upper": s.upper}
                for s in obj]
    return to_records(obj)


def config_hash(config: dict) -> str:
    blob = json.dumps(_plain(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def make_meta(seed=None, config: dict | None = None, **extra) -> dict:
    meta = {"seed": seed, "config_hash": config_hash(config or {}), "tool_version": __version__}
    meta.update(extra)
    return meta


def write_report(obj, fmt: str, path, meta: dict | None = None, extra: dict | None = None) -> None:
    """Write a result object as JSON or CSV.

    ``extra`` adds top-level JSON keys (e.g. pointwise rows or a saved model);
    it is ignored for CSV.
    """
    if fmt not in ("json", "csv"):
        raise ConfigError(f"output format must be json or csv, got {fmt!r}")
    path = Path(path)
    try:
        if fmt == "csv":
            write_csv_rows(to_records(obj), path)
            return
        doc = {"meta": meta or make_meta(), "results": _json_results(obj)}
        if isinstance(obj, SimReport):
            doc["pointwise"] = obj.pointwise
            doc["provenance"] = obj.provenance
        if extra:
            doc.update(extra)
        text = json.dumps(_plain(doc), indent=2, allow_nan=False)
        path.write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc}") from exc


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc


# -- models ------------------------------------------------------------------

def model_to_dict(model: FittedGP, names=()) -> dict:
    return {
        "kernel": format_kernel(model.kernel),
        "sigma2": model.sigma2,
        "lml": model.lml,
        "jitter": model.jitter,
        "scale_x": model.scale_x,
        "x_mean": model.x_mean,
        "x_sd": model.x_sd,
        "y_mean": model.y_mean,
        "y_sd": model.y_sd,
        "covariates": list(names),
        "X_train": model.X_train,
        "alpha": model.alpha,
        "chol": model.chol,
    }


def model_from_dict(d: dict) -> FittedGP:
    try:
        return FittedGP(
            kernel=parse_kernel(d["kernel"]),
            sigma2=float(d["sigma2"]),
            X_train=np.asarray(d["X_train"], dtype=float).reshape(len(d["X_train"]), -1),
            chol=np.asarray(d["chol"], dtype=float),
            alpha=np.asarray(d["alpha"], dtype=float),
            x_mean=np.asarray(d["x_mean"], dtype=float),
            x_sd=np.asarray(d["x_sd"], dtype=float),
            y_mean=float(d["y_mean"]),
            y_sd=float(d["y_sd"]),
            lml=float(d["lml"]),
            jitter=float(d.get("jitter", 0.0)),
            scale_x=bool(d.get("scale_x", True)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed model file: {exc}") from exc
