"""CART regression trees, random forests and gradient boosting.

Trees are stored as flat node arrays (``feature == -1`` marks a leaf), which
keeps prediction vectorized and makes the JSON form a plain node list.
Split search works on binned features: every distinct value gets its own
bin when a feature has at most ``max_bins`` of them, otherwise bins follow
quantiles.  Thresholds are stored on the original scale.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .validation import check_array, check_X_y

MODES = ("forest_mean", "boosted_sum")


class EmptyDataError(ValueError):
    pass


class InvalidLabelError(ValueError):
    pass


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=int)
        for k in range(self.node_count):
            if self.feature[k] >= 0:
                depth[self.left[k]] = depth[self.right[k]] = depth[k] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=int)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            cur = node[active]
            go_left = X[active, self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self) -> dict:
        return {"nodes": [
            {"id": k, "feature": int(self.feature[k]), "threshold": float(self.threshold[k]),
             "left": int(self.left[k]), "right": int(self.right[k]),
             "value": float(self.value[k]), "gain": float(self.gain[k]),
             "n_samples": int(self.n_samples[k])}
            for k in range(self.node_count)
        ]}

    @classmethod
    def from_dict(cls, payload: dict) -> "RegressionTree":
        nodes = sorted(payload["nodes"], key=lambda n: n["id"])
        col = lambda key, dt: np.array([n[key] for n in nodes], dtype=dt)  # noqa: E731
        return cls(col("feature", int), col("threshold", float), col("left", int),
                   col("right", int), col("value", float), col("gain", float),
                   col("n_samples", int))


@dataclass
class TreeEnsemble:
    trees: list[RegressionTree]
    mode: str
    n_features: int
    learning_rate: float = 1.0
    base_score: float = 0.0
    loss: str = "squared"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    def to_dict(self) -> dict:
        return {"format": "shiftsched.tree_ensemble", "version": 1, "mode": self.mode,
                "n_features": self.n_features, "learning_rate": self.learning_rate,
                "base_score": self.base_score, "loss": self.loss, "params": self.params,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, payload: dict) -> "TreeEnsemble":
        return cls([RegressionTree.from_dict(t) for t in payload["trees"]], payload["mode"],
                   int(payload["n_features"]), float(payload["learning_rate"]),
                   float(payload["base_score"]), payload.get("loss", "squared"),
                   payload.get("params", {}))

    def save(self, path):
        # repr round-trips floats exactly, so a frozen ensemble reloads bit-for-bit
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TreeEnsemble":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- binning -------------------------------------------------------------------

def _bin_edges(X, max_bins):
    edges = []
    for j in range(X.shape[1]):
        u = np.unique(X[:, j])
        if len(u) <= max_bins:
            e = (u[:-1] + u[1:]) / 2.0
        else:
            q = np.quantile(X[:, j], np.linspace(0, 1, max_bins + 1)[1:-1])
            e = np.unique(q)
            e = e[e < u[-1]]
        edges.append(e)
    return edges


def _bin_codes(X, edges):
    codes = np.empty(X.shape, dtype=np.int32)
    for j, e in enumerate(edges):
        codes[:, j] = np.searchsorted(e, X[:, j], side="left")
    return codes


class _Binned:
    def __init__(self, X, max_bins):
        self.edges = _bin_edges(X, max_bins)
        self.codes = _bin_codes(X, self.edges)
        self.n_edges = np.array([len(e) for e in self.edges])
        self.width = int(self.n_edges.max()) + 1 if len(self.edges) else 1


def _grow(binned, idx, target, params, rng, leaf_value=None):
    """Greedy depth-first CART growth on the rows ``idx`` of the binned matrix."""
    max_depth = params.get("max_depth")
    max_depth = np.inf if max_depth is None else max_depth
    min_leaf = max(1, int(params.get("min_leaf", 1)))
    min_gain = float(params.get("min_gain", 1e-12))
    d = binned.codes.shape[1]
    n_sub = params.get("feature_subsample")
    n_sub = d if n_sub is None else max(1, min(d, int(n_sub)))
    width = binned.width

    feat, thr, left, right, val, gain, cnt = [], [], [], [], [], [], []

    def new_node(rows):
        k = len(feat)
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(float(np.mean(target[rows])) if leaf_value is None else float(leaf_value(rows)))
        gain.append(0.0)
        cnt.append(len(rows))
        return k

    root = new_node(idx)
    stack = [(root, idx, 0)]
    while stack:
        node, rows, depth = stack.pop()
        n = len(rows)
        if depth >= max_depth or n < 2 * min_leaf:
            continue
        feats = np.arange(d) if n_sub == d else np.sort(rng.choice(d, n_sub, replace=False))
        y = target[rows]
        codes = binned.codes[np.ix_(rows, feats)]
        flat = (codes + (np.arange(len(feats)) * width)[None, :]).ravel()
        size = len(feats) * width
        s = np.bincount(flat, weights=np.repeat(y, len(feats)), minlength=size).reshape(len(feats), width)
        c = np.bincount(flat, minlength=size).reshape(len(feats), width)
        sl, cl = np.cumsum(s, axis=1), np.cumsum(c, axis=1)
        total_s, total_c = sl[0, -1], cl[0, -1]
        sr, cr = total_s - sl, total_c - cl
        ok = (cl >= min_leaf) & (cr >= min_leaf)
        ok &= np.arange(width)[None, :] < binned.n_edges[feats][:, None]
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            g = sl * sl / cl + sr * sr / cr - total_s * total_s / total_c
        g = np.where(ok, g, -np.inf)
        best = int(np.argmax(g))
        fi, b = divmod(best, width)
        scale = max(1.0, float(np.sum(y * y)))
        if not g[fi, b] > min_gain * scale:
            continue
        j = int(feats[fi])
        go_left = binned.codes[rows, j] <= b
        lrows, rrows = rows[go_left], rows[~go_left]
        feat[node], thr[node], gain[node] = j, float(binned.edges[j][b]), float(g[fi, b])
        ln, rn = new_node(lrows), new_node(rrows)
        left[node], right[node] = ln, rn
        stack.append((rn, rrows, depth + 1))
        stack.append((ln, lrows, depth + 1))
    return RegressionTree(np.array(feat), np.array(thr), np.array(left), np.array(right),
                          np.array(val), np.array(gain), np.array(cnt))


# -- public functional API ------------------------------------------------------

def fit_regression_tree(X, y, params=None) -> RegressionTree:
    """Single CART tree.  ``params``: max_depth, min_leaf, feature_subsample, seed, max_bins."""
    params = dict(params or {})
    X, y = _check_fit_data(X, y)
    binned = _Binned(X, params.get("max_bins", 256))
    rng = np.random.default_rng(params.get("seed", 0))
    return _grow(binned, np.arange(len(y)), y, params, rng)


def fit_random_forest(X, y, params=None) -> TreeEnsemble:
    """Bootstrap forest of CART trees averaged in ``forest_mean`` mode.

    Defaults: 100 trees, depth 8, min_leaf 5, sqrt(d) features per split,
    bootstrap on.  Tree ``k`` draws from ``default_rng([seed, k])``.
    """
    params = {"n_trees": 100, "max_depth": 8, "min_leaf": 5, "bootstrap": True,
              "seed": 0, "max_bins": 256, **(params or {})}
    X, y = _check_fit_data(X, y)
    if params["n_trees"] < 1:
        raise ValueError("n_trees must be >= 1")
    n, d = X.shape
    if params.get("feature_subsample", "sqrt") == "sqrt":
        params["feature_subsample"] = max(1, int(np.sqrt(d)))
    binned = _Binned(X, params["max_bins"])
    trees = []
    for k in range(params["n_trees"]):
        rng = np.random.default_rng([params["seed"], k])
        rows = rng.integers(0, n, n) if params["bootstrap"] else np.arange(n)
        trees.append(_grow(binned, rows, y, params, rng))
    return TreeEnsemble(trees, "forest_mean", d, params=_jsonable(params))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_gradient_boosting(X, targets, params=None) -> TreeEnsemble:
    """Stagewise boosting on negative gradients of squared or logistic loss.

    Logistic mode expects 0/1 targets, fits trees to ``y - p`` and sets each
    leaf to the Newton step ``sum(y - p) / sum(p(1-p))``; scores are log-odds.
    Defaults: 100 trees, depth 3, learning rate 0.1.
    """
    params = {"n_trees": 100, "max_depth": 3, "min_leaf": 1, "learning_rate": 0.1,
              "loss": "squared", "seed": 0, "max_bins": 256, **(params or {})}
    X, y = _check_fit_data(X, targets)
    loss = params["loss"]
    if loss not in ("squared", "logistic"):
        raise ValueError("loss must be 'squared' or 'logistic'")
    if loss == "logistic":
        if not np.all((y == 0) | (y == 1)):
            raise InvalidLabelError("logistic loss needs targets in {0, 1}")
        p = np.clip(y.mean(), 1e-12, 1 - 1e-12)
        base = float(np.log(p / (1 - p)))
    else:
        base = float(y.mean())
    lr = float(params["learning_rate"])
    binned = _Binned(X, params["max_bins"])
    score = np.full(len(y), base)
    rows = np.arange(len(y))
    trees = []
    for k in range(params["n_trees"]):
        rng = np.random.default_rng([params["seed"], k])
        if loss == "squared":
            resid = y - score
            tree = _grow(binned, rows, resid, params, rng)
        else:
            prob = _sigmoid(score)
            resid = y - prob
            hess = prob * (1 - prob)

            def newton(r, resid=resid, hess=hess):
                return np.sum(resid[r]) / max(np.sum(hess[r]), 1e-12)

            tree = _grow(binned, rows, resid, params, rng, leaf_value=newton)
        score = score + lr * tree.predict(X)
        trees.append(tree)
    return TreeEnsemble(trees, "boosted_sum", X.shape[1], lr, base, loss, _jsonable(params))


def ensemble_predict(e: TreeEnsemble, X) -> np.ndarray:
    X = check_array(X)
    if X.shape[1] != e.n_features:
        raise ValueError(f"ensemble was fitted on {e.n_features} features, got {X.shape[1]}")
    if e.mode == "forest_mean":
        if not e.trees:
            raise ValueError("a forest needs at least one tree")
        return np.mean([t.predict(X) for t in e.trees], axis=0)
    out = np.full(len(X), e.base_score)
    for t in e.trees:
        out += e.learning_rate * t.predict(X)
    return out


def feature_importance(e: TreeEnsemble) -> np.ndarray:
    """Split-gain importance normalized to sum to one (all zeros if no split was made)."""
    imp = np.zeros(e.n_features)
    for t in e.trees:
        internal = t.feature >= 0
        np.add.at(imp, t.feature[internal], t.gain[internal])
    total = imp.sum()
    return imp / total if total > 0 else imp


def _check_fit_data(X, y):
    if X is None or len(X) == 0:
        raise EmptyDataError("cannot fit on empty data")
    return check_X_y(X, y)


def _jsonable(params):
    return {k: (v.item() if isinstance(v, np.generic) else v) for k, v in params.items()}


# -- estimator wrappers ---------------------------------------------------------

class RandomForest(RegressorMixin, BaseEstimator):
    def __init__(self, n_trees=100, max_depth=8, min_leaf=5, feature_subsample="sqrt",
                 bootstrap=True, random_state=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.feature_subsample = feature_subsample
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y):
        self.ensemble_ = fit_random_forest(X, y, {
            "n_trees": self.n_trees, "max_depth": self.max_depth, "min_leaf": self.min_leaf,
            "feature_subsample": self.feature_subsample, "bootstrap": self.bootstrap,
            "seed": self.random_state})
        self.n_features_in_ = self.ensemble_.n_features
        return self

    def predict(self, X):
        return ensemble_predict(self.ensemble_, X)

    @property
    def feature_importances_(self):
        return feature_importance(self.ensemble_)


class GradientBoosting(BaseEstimator):
    """Boosted trees; ``loss='logistic'`` turns it into a binary classifier."""

    def __init__(self, n_trees=100, max_depth=3, learning_rate=0.1, min_leaf=1,
                 loss="squared", random_state=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.min_leaf = min_leaf
        self.loss = loss
        self.random_state = random_state

    def fit(self, X, y):
        self.ensemble_ = fit_gradient_boosting(X, y, {
            "n_trees": self.n_trees, "max_depth": self.max_depth,
            "learning_rate": self.learning_rate, "min_leaf": self.min_leaf,
            "loss": self.loss, "seed": self.random_state})
        self.n_features_in_ = self.ensemble_.n_features
        return self

    def decision_function(self, X):
        return ensemble_predict(self.ensemble_, X)

    def predict(self, X):
        score = self.decision_function(X)
        return (score > 0).astype(int) if self.loss == "logistic" else score

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1 - p, p])

    @property
    def feature_importances_(self):
        return feature_importance(self.ensemble_)
