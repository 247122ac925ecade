"""Scaling laws for finetuning loss and forgetting, with the tooling to fit,
evaluate and simulate them."""

__version__ = "0.1.0"

from .core import MODELS, FitDataset, LossCurve, RunRecord, flops_infer, flops_train, l0_table, validate_dataset
from .laws import Covariates, LawFamily, LawParams, eval_law, evaluate, grad_law, log_space_eval
from .fitting import FitConfig, FitResult, fit

__all__ = [
    "MODELS",
    "FitDataset",
    "LossCurve",
    "RunRecord",
    "flops_infer",
    "flops_train",
    "l0_table",
    "validate_dataset",
    "Covariates",
    "LawFamily",
    "LawParams",
    "eval_law",
    "evaluate",
    "grad_law",
    "log_space_eval",
    "FitConfig",
    "FitResult",
    "fit",
]
