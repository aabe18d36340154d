"""Sparse transition-graph estimation for linear-Gaussian state-space models.

The package provides exact filtering/smoothing for the LG-SSM, an EM
estimator of the state transition matrix under sparsity/stability priors
(methods GraphEM, StableEM, OracleEM and the unregularized MLEM), Granger
causality baselines, dataset builders and benchmark harnesses, and a MIMO
channel-tracking application.

Hot recursions run on a compiled extension when available; see
:func:`backend_name` for the active backend.
"""
from ._backend import available_backends, backend_name
from .ssm import (
    FilterOutput,
    InnovationError,
    ModelParams,
    ModelValidationError,
    SmootherOutput,
    Trajectory,
    kalman_filter,
    neg_log_likelihood,
    rts_smoother,
    simulate,
)
from .estep import EStepStats, estep_stats, map_loss, q_gradient, q_value
from .prox import PenaltyTerm, Regularizer, project_constraint, prox_penalty, prox_quadratic
from .mstep import MsConfig, MsResult, closed_form_mstep, ms_solve, surrogate_value
from .em import FitConfig, FitResult, fit, init_matrix, select_kappa
from .metrics import DetectionScores, detection, rmse
from .baselines import GrangerConfig, granger_graph
from .datasets import DatasetSpec, make_dataset

__version__ = "0.1.0"

__all__ = [
    "available_backends",
    "backend_name",
    "ModelParams",
    "Trajectory",
    "FilterOutput",
    "SmootherOutput",
    "ModelValidationError",
    "InnovationError",
    "simulate",
    "kalman_filter",
    "rts_smoother",
    "neg_log_likelihood",
    "EStepStats",
    "estep_stats",
    "q_value",
    "q_gradient",
    "map_loss",
    "PenaltyTerm",
    "Regularizer",
    "prox_penalty",
    "project_constraint",
    "prox_quadratic",
    "MsConfig",
    "MsResult",
    "ms_solve",
    "closed_form_mstep",
    "surrogate_value",
    "FitConfig",
    "FitResult",
    "fit",
    "init_matrix",
    "select_kappa",
    "DetectionScores",
    "rmse",
    "detection",
    "GrangerConfig",
    "granger_graph",
    "DatasetSpec",
    "make_dataset",
    "__version__",
]
