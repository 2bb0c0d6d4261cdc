"""Command-line entry point: ``gpcausal {fit,predict,cate,ate,its,rd,simulate}``.

Options can also come from a ``key = value`` file passed with ``--config``;
flags on the command line win. Exit codes: 0 ok, 1 usage/config error,
2 data error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import logging
import re
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cli_io import (
    ColumnBindings,
    PlotSeries,
    make_meta,
    model_from_dict,
    model_to_dict,
    parse_time_value,
    read_csv,
    read_json,
    write_report,
)
from .errors import ConfigError, GPError, InputError, NumericalError
from .estimators import RD_VARIANTS, its_estimate, rd_estimate, t_learner_ate, t_learner_cate
from .gp_core import fit, posterior
from .kernels import format_kernel, parse_kernel
from .simulations import DESIGNS, SimConfig, run_simulation

log = logging.getLogger("gpcausal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
COMMANDS = ("fit", "predict", "cate", "ate", "its", "rd", "simulate")
# large replication counts used by --full
FULL_REPS = {"overlap": 1000, "rd_total_random": 1000, "rd_latent": 1000, "rd_placebo_subsample": 2000}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pair(text: str) -> tuple:
    vals = _floats(text)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise argparse.ArgumentTypeError(f"expected 'low,high' with low < high, got {text!r}")
    return vals


def _names(text: str) -> tuple:
    return tuple(v.strip() for v in str(text).split(",") if v.strip())


def _grid(text: str) -> np.ndarray:
    """``start:stop:count`` or an explicit comma list."""
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        try:
            a, b, m = float(parts[0]), float(parts[1]), int(parts[2])
        except (ValueError, IndexError):
            raise argparse.ArgumentTypeError(f"grid must be start:stop:count, got {text!r}") from None
        return np.linspace(a, b, m)
    return np.array(_floats(text))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _common(p, data=True):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--output", "-o", required=False, help="output file (default: stdout)")
    p.add_argument("--format", dest="output_format", choices=("json", "csv"), default="json")
    p.add_argument("--level", type=float, default=0.95, help="confidence level")
    p.add_argument("--seed", type=int, default=None)
    if data:
        p.add_argument("--input", "-i", help="CSV file with a header row")
        p.add_argument("--outcome", default="y")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gpcausal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gpcausal {__version__}")
    parser.add_argument("--verbose", "-v", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a GP and save the model")
    _common(p)
    p.add_argument("--covariates", type=_names, required=False, default=("x",))
    p.add_argument("--kernel", default="auto")
    p.add_argument("--optimize-weights", type=_bool, default=False)
    p.add_argument("--sigma2", type=float, default=None, help="fix the noise level")

    p = sub.add_parser("predict", help="posterior bands from a saved model")
    _common(p, data=False)
    p.add_argument("--model", required=False)
    p.add_argument("--grid", type=_grid, required=False, help="start:stop:count or a,b,c (1-d models)")
    p.add_argument("--grid-csv", help="CSV of test points with the model's covariate columns")

    p = sub.add_parser("cate", help="T-learner conditional effects on a grid")
    _common(p)
    p.add_argument("--treatment", default="d")
    p.add_argument("--covariates", type=_names, default=("x",))
    p.add_argument("--grid", type=_grid, required=False)

    p = sub.add_parser("ate", help="T-learner ATE / ATT / ATC")
    _common(p)
    p.add_argument("--treatment", default="d")
    p.add_argument("--covariates", type=_names, default=("x",))
    p.add_argument("--estimand", type=str.upper, choices=("ATE", "ATT", "ATC"), default="ATE")

    p = sub.add_parser("its", help="interrupted time series")
    _common(p)
    p.add_argument("--time", default="t")
    p.add_argument("--t-treat", required=False, help="first treated period (number or YYYY-MM)")
    p.add_argument("--kernel", default=None, help="default: linear + periodic(period) + gaussian(auto)")
    p.add_argument("--period", type=float, default=12.0)
    p.add_argument("--optimize-weights", type=_bool, default=True)

    p = sub.add_parser("rd", help="sharp regression discontinuity")
    _common(p)
    p.add_argument("--running", default="x")
    p.add_argument("--cutoff", type=float, required=False)
    p.add_argument("--variant", choices=RD_VARIANTS, default="gp_rd")
    p.add_argument("--bandwidth", type=float, default=None)
    p.add_argument("--trim", type=_pair, default=None, help="low,high window kept by gp_causal_trim")
    p.add_argument("--interval", choices=("cef", "predictive"), default="cef")

    p = sub.add_parser("simulate", help="Monte Carlo coverage / length / RMSE")
    _common(p)
    p.add_argument("--design", choices=DESIGNS, required=False)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--full", type=_bool, nargs="?", const=True, default=False,
                   help="use the large replication counts")
    p.add_argument("--r2", type=float, default=0.3)
    p.add_argument("--treated-frac", type=float, default=0.5)
    p.add_argument("--sigmas", type=_floats, default=None)
    p.add_argument("--taus", type=_floats, default=None)
    p.add_argument("--steepness", type=_floats, default=None)
    p.add_argument("--noise", type=_floats, default=None)
    p.add_argument("--bandwidth", type=float, default=0.005)
    p.add_argument("--trim", type=_floats, default=None)
    p.add_argument("--cutoffs", type=_floats, default=None)
    p.add_argument("--true-cutoff", type=float, default=0.5)
    p.add_argument("--window", type=float, default=0.1)
    p.add_argument("--subsample", type=int, default=200)
    p.add_argument("--truth", type=float, default=None)
    p.add_argument("--variants", type=_names, default=None)
    p.add_argument("--running", default="x")
    p.add_argument("--n-jobs", type=int, default=1)
    p.add_argument("--pointwise", type=_bool, default=True, help="include pointwise rows in JSON")
    return parser


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


_NEGATIVE_VALUE = re.compile(r"^-[\d.]")
_SWITCHES = {"-v", "--verbose", "--full", "-h", "--help", "--version"}


def _attach_negative_values(argv):
    """Turn ``--grid -2:2:5`` into ``--grid=-2:2:5`` so argparse accepts it."""
    out, i = [], 0
    while i < len(argv):
        tok = argv[i]
        if (tok.startswith("-") and "=" not in tok and tok not in _SWITCHES
                and i + 1 < len(argv) and _NEGATIVE_VALUE.match(argv[i + 1])):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def parse_args(argv) -> argparse.Namespace:
    """Parse flags, filling anything not given on the command line from ``--config``."""
    argv = _attach_negative_values(list(argv))
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    file_values = read_config_file(known.config) if known.config else {}
    if not any(a in COMMANDS for a in argv) and "command" in file_values:
        argv = [file_values["command"], *argv]
    file_values.pop("command", None)

    parser = build_parser()
    if file_values:
        command = next((a for a in argv if a in COMMANDS), None)
        if command is None:
            raise ConfigError("no command given")
        subparser = parser._subparsers._group_actions[0].choices[command]
        dests = {a.dest: a for a in subparser._actions}
        converted = {}
        for key, value in file_values.items():
            if key not in dests or key in ("help", "config"):
                raise ConfigError(f"unknown config key {key!r} for command {command!r}")
            action = dests[key]
            try:
                converted[key] = action.type(value) if action.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise ConfigError(f"config key {key!r}: {exc}") from None
            if action.choices is not None and converted[key] not in action.choices:
                raise ConfigError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
        subparser.set_defaults(**converted)
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("no command given; choose one of " + ", ".join(COMMANDS))
    if not 0 < args.level < 1:
        raise ConfigError(f"--level must be in (0, 1), got {args.level}")
    return args


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise ConfigError(f"--{name.replace('_', '-')} is required for {args.command}")


def _run_config(args) -> dict:
    d = {k: v for k, v in vars(args).items() if k not in ("output", "output_format", "config", "verbose")}
    return d


def _emit(args, obj, meta, extra=None):
    if args.output:
        write_report(obj, args.output_format, args.output, meta, extra)
        return
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / f"out.{args.output_format}"
        write_report(obj, args.output_format, path, meta, extra)
        sys.stdout.write(path.read_text(encoding="utf-8"))


def _load(args, bindings):
    _require(args, "input")
    data, dropped = read_csv(args.input, bindings)
    return data, dropped


def cmd_fit(args):
    data, dropped = _load(args, ColumnBindings(args.outcome, args.covariates))
    kernel = "auto" if args.kernel == "auto" else parse_kernel(args.kernel)
    model = fit(data, kernel, sigma2=args.sigma2, optimize_weights=args.optimize_weights)
    summary = {"n": data.n, "d": data.d, "kernel": format_kernel(model.kernel), "sigma2": model.sigma2,
               "lml": model.lml, "y_mean": model.y_mean, "y_sd": model.y_sd, "dropped_rows": dropped}
    meta = make_meta(args.seed, _run_config(args), command="fit")
    return summary, meta, {"model": model_to_dict(model, data.names)}


def cmd_predict(args):
    _require(args, "model")
    doc = read_json(args.model)
    if "model" not in doc:
        raise InputError(f"{args.model} does not contain a fitted model")
    model = model_from_dict(doc["model"])
    names = doc["model"].get("covariates") or [f"x{j}" for j in range(model.d)]
    if args.grid_csv:
        data, _ = read_csv(args.grid_csv, ColumnBindings(names[0], tuple(names)))
        X = data.X
    elif args.grid is not None:
        if model.d != 1:
            raise ConfigError("--grid needs a 1-d model; use --grid-csv")
        X = args.grid[:, None]
    else:
        raise ConfigError("predict needs --grid or --grid-csv")
    pred = posterior(model, X)
    x = X[:, 0] if model.d == 1 else np.arange(X.shape[0], dtype=float)
    series = [PlotSeries.from_posterior("posterior", x, pred, "cef", args.level),
              PlotSeries.from_posterior("posterior", x, pred, "predictive", args.level)]
    return series, make_meta(args.seed, _run_config(args), command="predict"), None


def cmd_cate(args):
    data, dropped = _load(args, ColumnBindings(args.outcome, args.covariates, treatment=args.treatment))
    grid = args.grid
    if grid is None:
        if data.d != 1:
            raise ConfigError("--grid is required for multi-covariate CATE")
        grid = np.linspace(data.X[:, 0].min(), data.X[:, 0].max(), 101)
    est = t_learner_cate(data, grid, args.level)
    return est, make_meta(args.seed, _run_config(args), command="cate", dropped_rows=dropped), None


def cmd_ate(args):
    data, dropped = _load(args, ColumnBindings(args.outcome, args.covariates, treatment=args.treatment))
    est = t_learner_ate(data, args.estimand, args.level)
    return est, make_meta(args.seed, _run_config(args), command="ate", dropped_rows=dropped), None


def cmd_its(args):
    _require(args, "t_treat")
    data, dropped = _load(args, ColumnBindings(args.outcome, time=args.time))
    try:
        t_treat = parse_time_value(str(args.t_treat))
    except ValueError as exc:
        raise ConfigError(f"--t-treat: {exc}") from None
    kernel = parse_kernel(args.kernel) if args.kernel else None
    if kernel is None:
        from .estimators import default_its_kernel

        kernel = default_its_kernel(args.period)
    res = its_estimate(data, t_treat, kernel, args.level, optimize_weights=args.optimize_weights)
    meta = make_meta(args.seed, _run_config(args), command="its", dropped_rows=dropped,
                     kernel=format_kernel(res.kernel), sigma2=res.sigma2)
    return res, meta, None


def cmd_rd(args):
    _require(args, "cutoff")
    data, dropped = _load(args, ColumnBindings(args.outcome, running=args.running))
    res = rd_estimate(data, args.cutoff, args.variant, bandwidth=args.bandwidth, trim_window=args.trim,
                      level=args.level, interval=args.interval)
    return res, make_meta(args.seed, _run_config(args), command="rd", dropped_rows=dropped), None


def cmd_simulate(args):
    _require(args, "design")
    if args.seed is None:
        args.seed = secrets.randbits(63)
        log.info("no --seed given; using %d", args.seed)
    reps = FULL_REPS[args.design] if args.full else args.reps
    kw = dict(design=args.design, n=args.n, reps=reps, seed=args.seed, level=args.level, r2=args.r2,
              treated_frac=args.treated_frac, bandwidth=args.bandwidth, true_cutoff=args.true_cutoff,
              window=args.window, subsample=args.subsample, truth=args.truth, n_jobs=args.n_jobs)
    for name in ("sigmas", "taus", "steepness", "noise", "cutoffs", "trim", "variants"):
        if getattr(args, name) is not None:
            kw[name] = getattr(args, name)
    config = SimConfig(**kw)
    data = None
    if args.design == "rd_placebo_subsample" and args.input:
        data, _ = read_csv(args.input, ColumnBindings(args.outcome, running=args.running))
    report = run_simulation(config, data)
    if not args.pointwise:
        report.pointwise = []
    meta = make_meta(config.seed, config.to_dict(), command="simulate", design=config.design,
                     rng=report.provenance["rng"])
    meta["config_hash"] = config.config_hash()
    return report, meta, None


HANDLERS = {"fit": cmd_fit, "predict": cmd_predict, "cate": cmd_cate, "ate": cmd_ate,
            "its": cmd_its, "rd": cmd_rd, "simulate": cmd_simulate}


def _fail(message: str, code: int) -> int:
    print(f"gpcausal: {message}", file=sys.stderr)
    return code


def run(args: argparse.Namespace) -> int:
    """Dispatch a parsed command and write its output. Returns the exit code."""
    try:
        obj, meta, extra = HANDLERS[args.command](args)
        _emit(args, obj, meta, extra)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except NumericalError as exc:
        return _fail(f"numerical error: {exc}", EXIT_NUMERICAL)
    except (InputError, GPError) as exc:
        return _fail(f"data error: {exc}", EXIT_DATA)
    return EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    logging.basicConfig(level=logging.INFO if "-v" in argv or "--verbose" in argv else logging.WARNING,
                        format="gpcausal: %(message)s", stream=sys.stderr)
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    return run(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
