"""JSON checkpoints for fitted predictors.  Floats are written with ``repr``
precision by the json module, so a reload reproduces predictions bit for bit."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.utils.validation import check_is_fitted

from .. import nn
from .linear import ElasticNetRegressor, LinearModel, Standardizer
from .neural import DNNRegressor, WDGRLRegressor

FORMAT = "shiftsched.checkpoint"
KINDS = {"ElasticNetRegressor": ElasticNetRegressor, "DNNRegressor": DNNRegressor,
         "WDGRLRegressor": WDGRLRegressor}


class CheckpointError(ValueError):
    pass


def checkpoint_dict(model) -> dict:
    kind = type(model).__name__
    if kind not in KINDS:
        raise CheckpointError(f"cannot checkpoint {kind}")
    check_is_fitted(model, "standardizer_")
    payload = {"format": FORMAT, "version": 1, "kind": kind,
               "hyperparameters": model.get_params(),
               "standardizer": model.standardizer_.to_dict()}
    if isinstance(model, ElasticNetRegressor):
        lm = model.model_
        payload["linear"] = {"coefficients": lm.coefficients.tolist(), "intercept": lm.intercept,
                             "n_iter": lm.n_iter, "converged": lm.converged}
    else:
        payload.update({
            "y_mean": model.y_mean_, "y_scale": model.y_scale_,
            "extractor": model.extractor_.to_dict(), "regressor": model.regressor_.to_dict(),
            "critic": None if model.critic_ is None else model.critic_.to_dict()})
    return payload


def model_from_dict(p: dict):
    if p.get("format") != FORMAT or p.get("kind") not in KINDS:
        raise CheckpointError("not a shiftsched checkpoint")
    model = KINDS[p["kind"]](**p["hyperparameters"])
    model.standardizer_ = Standardizer.from_dict(p["standardizer"])
    model.n_features_in_ = model.standardizer_.n_features_in_
    if isinstance(model, ElasticNetRegressor):
        lin = p["linear"]
        model.model_ = LinearModel(np.asarray(lin["coefficients"], dtype=float),
                                   float(lin["intercept"]), model.lam, model.ratio,
                                   int(lin["n_iter"]), bool(lin["converged"]))
        return model
    model.y_mean_, model.y_scale_ = float(p["y_mean"]), float(p["y_scale"])
    model.extractor_ = nn.Mlp.from_dict(p["extractor"])
    model.regressor_ = nn.Mlp.from_dict(p["regressor"])
    model.critic_ = None if p["critic"] is None else nn.Mlp.from_dict(p["critic"])
    return model


def save_checkpoint(model, path):
    Path(path).write_text(json.dumps(checkpoint_dict(model)))


def load_checkpoint(path):
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model_from_dict(payload)
