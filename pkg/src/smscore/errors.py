"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations

from typing import Any


class SmsError(Exception):
    """Base class for all errors raised by ``smscore``.

    ``module`` names the component that raised, so the CLI can report
    where a failure came from.
    """

    module = "smscore"


class ConfigError(SmsError, ValueError):
    """Invalid configuration, such as a non-positive loss scale."""

    module = "loss"


class ShapeError(SmsError, ValueError):
    """Array dimensions do not agree."""

    module = "estimate"


class DomainError(SmsError, ValueError):
    """An argument lies outside the domain of the operation."""


class FormatError(SmsError, ValueError):
    """Malformed input file."""

    module = "dgp"


class InsufficientDataError(SmsError, ValueError):
    """Too few observations for the requested operation."""

    module = "dgp"


class DegenerateDataError(SmsError, ValueError):
    """Data that cannot identify the parameter (one class, collinear columns)."""

    module = "estimate"


class IterationLimitError(SmsError, RuntimeError):
    """The optimizer did not converge; ``last_iterate`` holds where it stopped."""

    module = "estimate"

    def __init__(self, message: str, last_iterate: Any = None):
        super().__init__(message)
        self.last_iterate = last_iterate


class IllConditionedError(SmsError, ArithmeticError):
    """Hessian singular, indefinite or too badly conditioned to invert."""

    module = "infer"

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class DegenerateVarianceError(SmsError, ArithmeticError):
    """A variance estimate that should be positive is not."""

    module = "infer"


class BootstrapInstabilityError(SmsError, RuntimeError):
    """Too many bootstrap resamples had to be rejected."""

    module = "infer"


class ExperimentError(SmsError, RuntimeError):
    """A Monte Carlo experiment needed too many replication redraws."""

    module = "mc"
