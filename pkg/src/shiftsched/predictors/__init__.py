from .linear import (ElasticNetRegressor, LinearModel, Standardizer, apply_standardizer,
                     fit_elastic_net, fit_standardizer)
from .neural import (DNNRegressor, TrainingDivergedError, TrainLog, WDGRLRegressor,
                     estimate_wasserstein, fit_dnn, fit_finetuned, fit_retrained, fit_wdgrl,
                     reveal_window)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .selection import CVResult, cross_validate, fold_indices

__all__ = [
    "CVResult", "CheckpointError", "DNNRegressor", "ElasticNetRegressor", "LinearModel", "Standardizer",
    "TrainLog", "TrainingDivergedError", "WDGRLRegressor", "apply_standardizer",
    "cross_validate", "estimate_wasserstein", "fit_dnn", "fit_elastic_net", "fit_finetuned",
    "fit_retrained", "fit_standardizer", "fit_wdgrl", "fold_indices", "load_checkpoint",
    "reveal_window", "save_checkpoint",
]
