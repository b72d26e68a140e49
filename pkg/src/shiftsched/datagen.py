"""Semi-synthetic data: Gaussian features with a controllable mean shift and
outcomes drawn from a tree-ensemble response surface plus noise.

The pipeline mirrors how such benchmarks are usually assembled from real
data: estimate the first two moments of both settings, fit a nonlinear
outcome model on the pooled labelled data, then resample features (shifting
the deployment mean by ``theta`` times the mean difference) and draw fresh
outcomes.  Because the real order data are external, :func:`seed_populations`
provides a built-in stand-in; CSV files with the same layout can be used
instead via :func:`load_csv`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import trees
from .validation import AUDIT, check_array, check_n_features

N_HISTORICAL = 5830
N_DEPLOYMENT = 3866
N_FEATURES = 20
LABEL_COLUMN = "throughput_days"
JITTERS = (0.0, 1e-10, 1e-8, 1e-6)


class InsufficientDataError(ValueError):
    pass


class NotFactorizableError(np.linalg.LinAlgError):
    pass


class SealedLabelError(PermissionError):
    pass


@dataclass
class GaussianSpec:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        d = len(self.mean)
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9, rtol=0):
            raise ValueError("covariance must be symmetric")

    @property
    def dim(self) -> int:
        return len(self.mean)


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma_y: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError("noise kind must be 'gaussian' or 'uniform'")
        if self.sigma_y < 0:
            raise ValueError("sigma_y must be nonnegative")

    @property
    def half_width(self) -> float:
        """Half-width of the uniform variant; chosen so its std equals ``sigma_y``."""
        return math.sqrt(12.0) * self.sigma_y / 2.0

    def sample(self, n, rng) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.sigma_y, n)
        return rng.uniform(-self.half_width, self.half_width, n)


class Dataset:
    """Feature matrix with optional throughput-time labels.

    Deployment-setting (``"B"``) labels are sealed: they can only be read
    through :meth:`reveal_labels`, which records the purpose of every read.
    """

    def __init__(self, features, labels=None, setting_tag="A", feature_names=None):
        self.features = check_array(features)
        self.setting_tag = setting_tag
        self.feature_names = list(feature_names) if feature_names is not None else [
            f"x{j + 1}" for j in range(self.features.shape[1])]
        if labels is not None:
            labels = np.asarray(labels, dtype=float).ravel()
            if len(labels) != len(self.features):
                raise ValueError("labels must have one entry per row")
            if np.any(labels < 0):
                raise ValueError("throughput times must be nonnegative")
        self._labels = labels

    @property
    def n(self) -> int:
        return len(self.features)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    @property
    def labels(self) -> np.ndarray | None:
        if self.setting_tag == "B" and self._labels is not None:
            raise SealedLabelError("deployment labels are sealed; use reveal_labels(purpose)")
        return self._labels

    def reveal_labels(self, purpose: str) -> np.ndarray:
        if self._labels is None:
            raise ValueError("dataset has no labels")
        AUDIT.record(self.setting_tag, purpose)
        return self._labels

    def subset(self, rows, setting_tag=None) -> "Dataset":
        rows = np.asarray(rows)
        labels = None if self._labels is None else self._labels[rows]
        return Dataset(self.features[rows], labels, setting_tag or self.setting_tag,
                       self.feature_names)


def estimate_moments(X) -> GaussianSpec:
    """Sample mean and unbiased sample covariance."""
    X = check_array(X)
    if len(X) < 2:
        raise InsufficientDataError("need at least two rows to estimate a covariance")
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    return GaussianSpec(X.mean(axis=0), (cov + cov.T) / 2.0)


def cholesky_psd(cov) -> np.ndarray:
    """Lower Cholesky factor of ``cov + jitter*I`` with escalating jitter."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if not np.allclose(cov, cov.T, atol=1e-9, rtol=0):
        raise ValueError("matrix must be symmetric")
    eye = np.eye(len(cov))
    for jitter in JITTERS:
        try:
            return np.linalg.cholesky(cov + jitter * eye)
        except np.linalg.LinAlgError:
            continue
    raise NotFactorizableError(f"not positive semi-definite even with jitter {JITTERS[-1]}")


def sample_gaussian(spec: GaussianSpec, n: int, seed) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    L = cholesky_psd(spec.cov)
    z = rng.standard_normal((n, spec.dim))
    return spec.mean + z @ L.T


def shifted_spec(spec_a: GaussianSpec, spec_b: GaussianSpec, theta: float) -> GaussianSpec:
    """Mean moved ``theta`` times along ``mean_B - mean_A``; covariance of B."""
    if spec_a.dim != spec_b.dim:
        raise ValueError("settings must share the feature dimension")
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    return GaussianSpec(spec_a.mean + theta * (spec_b.mean - spec_a.mean), spec_b.cov.copy())


def generate_outcomes(phi: trees.TreeEnsemble, X, noise: NoiseSpec, seed) -> np.ndarray:
    """``max(0, phi(x) + eta)``."""
    X = check_n_features(X, phi.n_features, "outcome model")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return np.maximum(0.0, trees.ensemble_predict(phi, X) + noise.sample(len(X), rng))


def assign_due_dates(phi_values, slack_sigma: float = 5.0, horizon_spread: int = 60,
                     seed=0) -> np.ndarray:
    """Integer due slots: uniform release in ``1..horizon_spread`` plus a noisy lead time."""
    if slack_sigma < 0:
        raise ValueError("slack_sigma must be nonnegative")
    phi_values = np.asarray(phi_values, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    release = rng.integers(1, int(horizon_spread) + 1, len(phi_values))
    nu = rng.normal(0.0, slack_sigma, len(phi_values)) if slack_sigma > 0 else 0.0
    return release + np.ceil(np.maximum(1.0, phi_values + nu)).astype(int)


# -- built-in seed populations -------------------------------------------------
#
# Four causal features each have a strongly correlated companion (rho = 0.9).
# Only the companions differ in mean between the two settings, so a model
# that leans on them as proxies for the causal features degrades under the
# shift while the outcome law itself is shared.

PROXY_PAIRS = ((2, 11), (4, 1), (8, 12), (5, 14))
PROXY_CORRELATION = 0.9
MEAN_DIFFERENCE = {11: 1.5, 1: 1.5, 12: 1.5, 14: 1.5, 3: 0.2, 7: 0.2}
LABEL_NOISE = 10.0


def seed_covariance(seed: int = 2024) -> np.ndarray:
    rng = np.random.default_rng(seed)
    load = rng.normal(0.0, 0.3, (N_FEATURES, 3))
    cov = load @ load.T + np.eye(N_FEATURES)
    s = np.sqrt(np.diag(cov))
    cov = cov / np.outer(s, s)
    for c, p in PROXY_PAIRS:
        cov[c, p] = cov[p, c] = PROXY_CORRELATION
    w, v = np.linalg.eigh(cov)
    cov = v @ np.diag(np.maximum(w, 0.05)) @ v.T
    s = np.sqrt(np.diag(cov))
    return cov / np.outer(s, s)


def seed_response(X) -> np.ndarray:
    """Noise-free throughput time (days) of the built-in seed populations."""
    X = check_array(X)
    return (32.0 + 6.0 * np.tanh(1.5 * X[:, 2]) + 5.0 * np.maximum(X[:, 4], 0.0)
            + 3.0 * X[:, 5] * X[:, 6] + 4.0 * X[:, 8] + 2.0 * np.abs(X[:, 9]) + 3.0 * X[:, 5])


def seed_populations(seed: int = 2024, n_a: int = N_HISTORICAL, n_b: int = N_DEPLOYMENT):
    """Labelled stand-ins for the historical (A) and deployment (B) order settings."""
    rng = np.random.default_rng(seed)
    cov = seed_covariance(seed)
    diff = np.zeros(N_FEATURES)
    for j, v in MEAN_DIFFERENCE.items():
        diff[j] = v
    L = cholesky_psd(cov)
    xa = rng.standard_normal((n_a, N_FEATURES)) @ L.T
    xb = diff + rng.standard_normal((n_b, N_FEATURES)) @ L.T
    ya = np.maximum(0.0, seed_response(xa) + rng.normal(0.0, LABEL_NOISE, n_a))
    yb = np.maximum(0.0, seed_response(xb) + rng.normal(0.0, LABEL_NOISE, n_b))
    return Dataset(xa, ya, "seedA"), Dataset(xb, yb, "seedB")


# -- CSV -------------------------------------------------------------------------

def load_csv(path, setting_tag="A") -> Dataset:
    """Header row of feature names plus an optional ``throughput_days`` column."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body if r], dtype=float)
    if data.size == 0:
        raise ValueError(f"{path} has no data rows")
    labels = None
    if LABEL_COLUMN in header:
        k = header.index(LABEL_COLUMN)
        labels = data[:, k]
        data = np.delete(data, k, axis=1)
        header = header[:k] + header[k + 1:]
    return Dataset(data, labels, setting_tag, header)


def write_csv(path, dataset: Dataset, include_labels=True, purpose="export"):
    labels = None
    if include_labels and dataset.has_labels:
        labels = dataset.reveal_labels(purpose)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.feature_names + ([LABEL_COLUMN] if labels is not None else []))
        for k, row in enumerate(dataset.features):
            vals = [repr(float(v)) for v in row]
            if labels is not None:
                vals.append(repr(float(labels[k])))
            w.writerow(vals)


# -- the full pipeline -------------------------------------------------------------

@dataclass
class OutcomeModel:
    """Frozen response surface ``phi`` together with the noise scale it implies."""

    phi: trees.TreeEnsemble
    spec_a: GaussianSpec
    spec_b: GaussianSpec
    sigma_y: float

    def save(self, path):
        import json

        payload = {"phi": self.phi.to_dict(), "sigma_y": self.sigma_y,
                   "mean_a": self.spec_a.mean.tolist(), "cov_a": self.spec_a.cov.tolist(),
                   "mean_b": self.spec_b.mean.tolist(), "cov_b": self.spec_b.cov.tolist()}
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path) -> "OutcomeModel":
        import json

        p = json.loads(Path(path).read_text())
        return cls(trees.TreeEnsemble.from_dict(p["phi"]), GaussianSpec(p["mean_a"], p["cov_a"]),
                   GaussianSpec(p["mean_b"], p["cov_b"]), float(p["sigma_y"]))


def fit_outcome_model(seed_a: Dataset, seed_b: Dataset, phi_kind="forest", seed=0,
                      phi_params=None) -> OutcomeModel:
    """Estimate both settings' moments and fit ``phi`` on the pooled labelled seed data."""
    if seed_a.d != seed_b.d:
        raise ValueError("seed datasets must share the feature dimension")
    ya = seed_a.reveal_labels("outcome-model")
    yb = seed_b.reveal_labels("outcome-model")
    X = np.vstack([seed_a.features, seed_b.features])
    y = np.concatenate([ya, yb])
    params = {"seed": seed, **(phi_params or {})}
    if phi_kind == "forest":
        phi = trees.fit_random_forest(X, y, params)
    elif phi_kind == "boosting":
        phi = trees.fit_gradient_boosting(X, y, {"loss": "squared", **params})
    else:
        raise ValueError("phi_kind must be 'forest' or 'boosting'")
    return OutcomeModel(phi, estimate_moments(seed_a.features), estimate_moments(seed_b.features),
                        float(np.std(y, ddof=1)))


@dataclass
class SemiSyntheticData:
    historical: Dataset
    deployment: Dataset
    due_dates: np.ndarray
    phi_deployment: np.ndarray
    theta: float
    extras: dict = field(default_factory=dict)


def _rng(*key):
    return np.random.default_rng([int(k) for k in key])


def build_semisynthetic(model: OutcomeModel, theta: float, n: int = N_HISTORICAL,
                        m: int = N_DEPLOYMENT, noise_kind: str = "gaussian", seed: int = 0,
                        sigma_y: float | None = None, slack_sigma: float = 5.0,
                        horizon_spread: int = 60) -> SemiSyntheticData:
    """One replicate.  Historical draws depend on ``seed`` only, so every theta of a
    replicate shares the same labelled training data."""
    noise = NoiseSpec(noise_kind, model.sigma_y if sigma_y is None else sigma_y)
    tkey = int(round(theta * 1000))
    xa = sample_gaussian(model.spec_a, n, _rng(seed, 0))
    ya = generate_outcomes(model.phi, xa, noise, _rng(seed, 1))
    xb = sample_gaussian(shifted_spec(model.spec_a, model.spec_b, theta), m, _rng(seed, 2, tkey))
    phi_b = trees.ensemble_predict(model.phi, xb)
    yb = np.maximum(0.0, phi_b + noise.sample(m, _rng(seed, 3, tkey)))
    due = assign_due_dates(phi_b, slack_sigma, horizon_spread, _rng(seed, 4, tkey))
    return SemiSyntheticData(Dataset(xa, ya, "A"), Dataset(xb, yb, "B"), due, phi_b, theta)
