"""Gaussian-process regression with zero user-set hyperparameters, and GP-based
causal estimators for poor overlap, interrupted time series and regression
discontinuity designs."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    ContractViolation,
    DegenerateInputError,
    GPError,
    InputError,
    InsufficientDataError,
    NumericalError,
)
from .kernels import (  # noqa: E402
    Gaussian,
    Linear,
    Periodic,
    Polynomial,
    Sum,
    cross_gram,
    evaluate,
    gram,
    parse_kernel,
    select_bandwidth,
)
from .gp_core import (  # noqa: E402
    Dataset,
    FittedGP,
    PosteriorPrediction,
    cef_at,
    fit,
    log_marginal_likelihood,
    posterior,
    standardize,
)
from .estimators import (  # noqa: E402
    bandwidth_from_correlation,
    its_estimate,
    rd_estimate,
    t_learner_ate,
    t_learner_cate,
)
from .simulations import SimConfig, SimReport, run_simulation  # noqa: E402

__all__ = [
    "__version__",
    "GPError", "ConfigError", "InputError", "ContractViolation", "InsufficientDataError",
    "DegenerateInputError", "NumericalError",
    "Gaussian", "Linear", "Periodic", "Polynomial", "Sum",
    "evaluate", "gram", "cross_gram", "select_bandwidth", "parse_kernel",
    "Dataset", "FittedGP", "PosteriorPrediction", "standardize", "log_marginal_likelihood",
    "fit", "posterior", "cef_at",
    "t_learner_cate", "t_learner_ate", "its_estimate", "rd_estimate", "bandwidth_from_correlation",
    "SimConfig", "SimReport", "run_simulation",
]
