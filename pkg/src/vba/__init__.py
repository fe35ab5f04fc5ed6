"""Variational backdoor adjustment for high-dimensional treatments and confounders."""

from .engine import (
    ContractError,
    ElboEstimate,
    Metrics,
    TrainReport,
    VbaModel,
    elbo_estimate,
    evaluate,
    finetune_encoder,
    naive_mc_estimate,
    train_fully_joint,
    train_separate,
)
from .estimator import VariationalBackdoorAdjustment
from .scm_discrete import DiscreteScm
from .scm_gaussian import Dataset, Origin, ScmConfig

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "Dataset",
    "DiscreteScm",
    "ElboEstimate",
    "Metrics",
    "Origin",
    "ScmConfig",
    "TrainReport",
    "VariationalBackdoorAdjustment",
    "VbaModel",
    "elbo_estimate",
    "evaluate",
    "finetune_encoder",
    "naive_mc_estimate",
    "train_fully_joint",
    "train_separate",
]
