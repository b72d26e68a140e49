"""Shift detection by adversarial validation, ROC-AUC and Welch's t-test."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata
from sklearn.model_selection import StratifiedGroupKFold

from .trees import GradientBoosting
from .validation import check_array


class SingleClassError(ValueError):
    pass


class DegenerateVarianceError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """Mann-Whitney estimate of the ROC-AUC with midranks for ties."""
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    pos = labels == 1
    n1, n0 = int(pos.sum()), int((~pos).sum())
    if n1 == 0 or n0 == 0:
        raise SingleClassError("ROC-AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


# -- Student-t tail via the regularized incomplete beta function -------------------

def _beta_cf(a, b, x, max_iter=500, eps=1e-16):
    """Lentz evaluation of the continued fraction for I_x(a, b)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_reg(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cf(a, b, x) / a
    return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def student_t_two_sided(t: float, dof: float) -> float:
    """P(|T| >= |t|) for Student's t with ``dof`` degrees of freedom."""
    if dof <= 0:
        raise ValueError("degrees of freedom must be positive")
    if t == 0:
        return 1.0
    return min(1.0, betainc_reg(dof / 2.0, 0.5, dof / (dof + t * t)))


@dataclass(frozen=True)
class WelchResult:
    t: float
    dof: float
    p_value: float


def welch_t_test(sample_a, sample_b) -> WelchResult:
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if len(a) < 2 or len(b) < 2:
        raise DegenerateVarianceError("each sample needs at least two values")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    if va == 0 and vb == 0:
        if a.mean() == b.mean():
            return WelchResult(0.0, float(len(a) + len(b) - 2), 1.0)
        raise DegenerateVarianceError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    dof = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return WelchResult(float(t), float(dof), student_t_two_sided(float(t), float(dof)))


# -- adversarial validation -------------------------------------------------------

@dataclass
class ShiftReport:
    roc_auc: float
    importance: np.ndarray
    feature_names: list[str]
    folds: int
    repeats: int
    seed: int
    fold_aucs: list[float] = field(default_factory=list)

    def ranking(self) -> list[tuple[str, float]]:
        order = np.argsort(-self.importance, kind="stable")
        return [(self.feature_names[j], float(self.importance[j])) for j in order]

    def to_text(self, top=10) -> str:
        lines = [f"roc_auc: {self.roc_auc:.4f}",
                 f"folds: {self.folds}", f"repeats: {self.repeats}", f"seed: {self.seed}",
                 "importance:"]
        lines += [f"  {name}: {value:.4f}" for name, value in self.ranking()[:top]]
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature", "importance"])
            for name, value in self.ranking():
                w.writerow([name, repr(value)])


def adversarial_validation(X_a, X_b, folds=5, seed=0, repeats=20, n_trees=200, max_depth=4,
                           learning_rate=0.1, feature_names=None) -> ShiftReport:
    """Out-of-fold ROC-AUC of a boosted classifier separating A (0) from B (1).

    Each repeat reshuffles the stratified folds; the reported AUC is the mean
    of the per-repeat pooled out-of-fold AUCs.  Identical rows always share a
    fold, otherwise a duplicated row would be scored by a model trained on its
    twin with the opposite label.  Importance comes from one classifier
    fitted on all rows.
    """
    X_a, X_b = check_array(X_a, name="X_a"), check_array(X_b, name="X_b")
    if len(X_a) == 0 or len(X_b) == 0:
        raise ValueError("both settings need at least one row")
    if X_a.shape[1] != X_b.shape[1]:
        raise ValueError("settings must share the feature dimension")
    X = np.vstack([X_a, X_b])
    y = np.r_[np.zeros(len(X_a), dtype=int), np.ones(len(X_b), dtype=int)]
    groups = np.unique(X, axis=0, return_inverse=True)[1].ravel()
    clf = GradientBoosting(n_trees=n_trees, max_depth=max_depth, learning_rate=learning_rate,
                           loss="logistic")
    aucs = []
    for r in range(repeats):
        split = StratifiedGroupKFold(n_splits=folds, shuffle=True, random_state=seed + r)
        oof = np.empty(len(X))
        for k, (tr, va) in enumerate(split.split(X, y, groups)):
            model = clf.set_params(random_state=seed * 1000 + r * folds + k).fit(X[tr], y[tr])
            oof[va] = model.decision_function(X[va])
        aucs.append(roc_auc(oof, y))
    full = clf.set_params(random_state=seed).fit(X, y)
    names = list(feature_names) if feature_names is not None else [
        f"x{j}" for j in range(X.shape[1])]
    return ShiftReport(float(np.mean(aucs)), full.feature_importances_, names, folds, repeats,
                       seed, aucs)


def write_report(report: ShiftReport, out_dir, stem="shift") -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    text, table = out_dir / f"{stem}.txt", out_dir / f"{stem}_importance.csv"
    text.write_text(report.to_text())
    report.write_csv(table)
    return text, table
