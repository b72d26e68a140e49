from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..validation import AUDIT, check_array, check_n_features, check_X_y, fingerprint

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-feature z-scoring with the n-1 standard deviation (floored at 1e-8).

    Every fit is recorded in the audit log with a fingerprint of the data so
    that callers can verify which matrix the moments came from.
    """

    def __init__(self, setting="A"):
        self.setting = setting

    def fit(self, X, y=None):
        X = check_array(X)
        if len(X) < 2:
            raise ValueError("standardizer needs at least two rows")
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0, ddof=1), STD_FLOOR)
        self.n_features_in_ = X.shape[1]
        self.fingerprint_ = fingerprint(X)
        AUDIT.record(self.setting, "standardizer-fit", self.fingerprint_)
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_n_features(X, self.n_features_in_, "standardizer")
        return (X - self.mean_) / self.scale_

    def to_dict(self) -> dict:
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "setting": self.setting, "fingerprint": self.fingerprint_}

    @classmethod
    def from_dict(cls, payload) -> "Standardizer":
        s = cls(payload.get("setting", "A"))
        s.mean_ = np.asarray(payload["mean"], dtype=float)
        s.scale_ = np.asarray(payload["scale"], dtype=float)
        s.n_features_in_ = len(s.mean_)
        s.fingerprint_ = payload.get("fingerprint", "")
        return s


def fit_standardizer(X, setting="A") -> Standardizer:
    return Standardizer(setting).fit(X)


def apply_standardizer(s: Standardizer, X) -> np.ndarray:
    return s.transform(X)


@dataclass
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    lam: float
    ratio: float
    n_iter: int = 0
    converged: bool = True

    def predict(self, X) -> np.ndarray:
        X = check_n_features(X, len(self.coefficients), "linear model")
        return self.intercept + X @ self.coefficients


def _soft_threshold(z, t):
    return np.sign(z) * max(abs(z) - t, 0.0)


def fit_elastic_net(X, y, lam=0.1, ratio=1.0, tol=1e-10, max_iter=10_000) -> LinearModel:
    """Cyclic coordinate descent on

        1/(2n) ||y - X b - c||^2 + lam * (ratio ||b||_1 + (1 - ratio)/2 ||b||_2^2)

    with an unpenalized intercept ``c``.  Stops when no coefficient moves by
    more than ``tol`` in a full sweep; hitting ``max_iter`` is logged and
    reported through ``converged`` rather than raised.
    """
    X, y = check_X_y(X, y)
    if lam < 0 or not 0.0 <= ratio <= 1.0:
        raise ValueError("need lam >= 0 and ratio in [0, 1]")
    n, d = X.shape
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    col_sq = np.einsum("ij,ij->j", Xc, Xc) / n
    l1, l2 = lam * ratio, lam * (1.0 - ratio)
    beta = np.zeros(d)
    resid = yc.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        max_step = 0.0
        for j in range(d):
            denom = col_sq[j] + l2
            if denom == 0.0:
                continue
            old = beta[j]
            rho = Xc[:, j] @ resid / n + col_sq[j] * old
            new = _soft_threshold(rho, l1) / denom
            if new != old:
                resid -= Xc[:, j] * (new - old)
                beta[j] = new
                max_step = max(max_step, abs(new - old))
        if max_step < tol:
            converged = True
            break
    if not converged:
        log.warning("elastic net did not converge after %d sweeps (lam=%g, ratio=%g)",
                    it, lam, ratio)
    return LinearModel(beta, float(ym - xm @ beta), float(lam), float(ratio), it, converged)


class ElasticNetRegressor(RegressorMixin, BaseEstimator):
    """Standardize, then fit :func:`fit_elastic_net`."""

    def __init__(self, lam=0.1, ratio=1.0, tol=1e-8, max_iter=10_000):
        self.lam = lam
        self.ratio = ratio
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.standardizer_ = Standardizer().fit(X)
        self.model_ = fit_elastic_net(self.standardizer_.transform(X), y, self.lam, self.ratio,
                                      self.tol, self.max_iter)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict(self.standardizer_.transform(X))
