"""Surrogate maximum score estimation for binary choice models."""

from __future__ import annotations

__version__ = "0.1.0"

from .baseline import MaxScoreFit, fit_maxscore_2d, score_q0
from .dgp import DESIGNS, Dataset, SimDesign, gen_dataset, load_csv, sample_x, write_csv
from .errors import SmsError
from .estimate import (
    AngleFit,
    FitOptions,
    FitResult,
    angle_objective,
    angle_of,
    fit,
    fit_angle,
    objective,
)
from .infer import (
    AngleSandwich,
    CiReport,
    SandwichEstimate,
    bootstrap_angle,
    bootstrap_studentized,
    ci_normal,
    ci_normal_angle,
    sandwich,
    sandwich_angle,
)
from .loss import LossKind, LossSpec, PhiEval, eval_obs_loss, eval_phi
from .mc import McConfig, McReport, run_coverage, run_distribution, run_rmse, simulate

__all__ = [
    "AngleFit",
    "AngleSandwich",
    "CiReport",
    "DESIGNS",
    "Dataset",
    "FitOptions",
    "FitResult",
    "LossKind",
    "LossSpec",
    "MaxScoreFit",
    "McConfig",
    "McReport",
    "PhiEval",
    "SandwichEstimate",
    "SimDesign",
    "SmsError",
    "angle_objective",
    "angle_of",
    "bootstrap_angle",
    "bootstrap_studentized",
    "ci_normal",
    "ci_normal_angle",
    "eval_obs_loss",
    "eval_phi",
    "fit",
    "fit_angle",
    "fit_maxscore_2d",
    "gen_dataset",
    "load_csv",
    "objective",
    "run_coverage",
    "run_distribution",
    "run_rmse",
    "sample_x",
    "sandwich",
    "sandwich_angle",
    "score_q0",
    "simulate",
    "write_csv",
]
