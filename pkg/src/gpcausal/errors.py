"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so new errors should subclass one of
the three families below rather than ``GPError`` directly.
"""


class GPError(Exception):
    """Base class for all package errors."""


class ConfigError(GPError, ValueError):
    """Bad usage or configuration (CLI exit code 1)."""


class InputError(GPError, ValueError):
    """Malformed, non-finite or otherwise unusable data (exit code 2)."""


class ContractViolation(InputError):
    """Shapes or dimensions that do not line up."""


class InsufficientDataError(InputError):
    """Too few observations for the requested operation."""


class DegenerateInputError(InputError):
    """Zero-variance column or outcome."""


class NumericalError(GPError, ArithmeticError):
    """Factorization failed even after jitter escalation (exit code 3)."""
