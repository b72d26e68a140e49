"""Grid search with k-fold cross-validation on historical data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import clone
from sklearn.model_selection import KFold, ParameterGrid

from ..validation import check_X_y


@dataclass
class CVResult:
    best_params: dict
    mean_scores: list[float]
    fold_scores: np.ndarray  # (n_configs, k) validation MAE
    candidates: list[dict]


def fold_indices(n, k=5, seed=0):
    """Deterministic shuffled k-fold split as (train, validation) index pairs."""
    if k < 2:
        raise ValueError("need k >= 2 folds")
    return list(KFold(n_splits=k, shuffle=True, random_state=seed).split(np.arange(n)))


def cross_validate(estimator, grid, X, y, k=5, seed=0) -> CVResult:
    """Exhaustive search over ``grid`` scored by mean validation MAE.

    Ties go to the earlier configuration in grid order.
    """
    X, y = check_X_y(X, y)
    candidates = list(ParameterGrid(grid))
    if not candidates or not grid:
        raise ValueError("empty hyperparameter grid")
    folds = fold_indices(len(X), k, seed)
    scores = np.empty((len(candidates), k))
    for c, params in enumerate(candidates):
        for f, (tr, va) in enumerate(folds):
            model = clone(estimator).set_params(**params).fit(X[tr], y[tr])
            scores[c, f] = np.mean(np.abs(model.predict(X[va]) - y[va]))
    means = scores.mean(axis=1)
    best = int(np.argmin(means))
    return CVResult(dict(candidates[best]), means.tolist(), scores, candidates)
