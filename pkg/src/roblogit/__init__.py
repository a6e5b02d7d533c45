"""Penalized robust M-estimators for sparse logistic regression."""

from ._backend import BACKEND
from .dataset import Dataset
from .exceptions import (
    ContractError,
    DegenerateDirectionError,
    DivergedError,
    DomainError,
    IllConditionedError,
    RobLogitError,
    UnsupportedOperationError,
)
from .inference import (
    InferenceReport,
    estimate_moment_matrices,
    prediction_distance,
    sandwich_covariance,
    wald_statistic,
)
from .losses import LossFamily, LossSpec
from .penalties import PenaltyFamily, PenaltySpec
from .simlab import Scenario, SimReport, generate, normality_check, rate_slope, run_experiment
from .solver import FitConfig, FitResult, bic, fit, lambda_path, project_l1_ball, select_lambda_bic

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "ContractError",
    "Dataset",
    "DegenerateDirectionError",
    "DivergedError",
    "DomainError",
    "FitConfig",
    "FitResult",
    "IllConditionedError",
    "InferenceReport",
    "LossFamily",
    "LossSpec",
    "PenaltyFamily",
    "PenaltySpec",
    "RobLogitError",
    "Scenario",
    "SimReport",
    "UnsupportedOperationError",
    "bic",
    "estimate_moment_matrices",
    "fit",
    "generate",
    "lambda_path",
    "normality_check",
    "prediction_distance",
    "project_l1_ball",
    "rate_slope",
    "run_experiment",
    "sandwich_covariance",
    "select_lambda_bic",
    "wald_statistic",
]
