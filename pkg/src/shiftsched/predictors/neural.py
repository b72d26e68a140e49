"""Feed-forward regressors trained with mean absolute error, with and without
a Wasserstein critic aligning historical and deployment latent features.

Network layout (shared by every estimator here so that comparisons only
differ in the training objective)::

    extractor:  d -> hidden_units (ReLU)                   [x extractor_layers]
    regressor:  dropout -> hidden -> regressor_units (ReLU) -> dropout -> 1
    critic:     hidden -> critic_units (ReLU) -> 1

Features are standardized with historical-setting moments and targets are
z-scored internally, so ``alpha`` weighs the critic gap against an MAE
measured in target standard deviations.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .. import nn
from ..validation import check_array, check_X_y
from .linear import Standardizer

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainLog:
    """Per-epoch averages: MAE (days), critic gap W, gradient penalty."""

    reg_loss: list[float] = field(default_factory=list)
    wasserstein: list[float] = field(default_factory=list)
    grad_penalty: list[float] = field(default_factory=list)

    def __len__(self):
        return len(self.reg_loss)

    def to_dict(self) -> dict:
        return {"reg_loss": self.reg_loss, "wasserstein": self.wasserstein,
                "grad_penalty": self.grad_penalty}


def _streams(seed):
    """Independent integer seeds for init, batching, dropout and the critic."""
    names = ("extractor", "regressor", "critic", "batches", "dropout", "adversary")
    return dict(zip(names, np.random.SeedSequence(int(seed)).generate_state(len(names)).tolist()))


def build_extractor(d, hidden_units, layers, l2, seed) -> nn.Mlp:
    specs, width = [], d
    for _ in range(layers):
        specs.append(nn.LayerSpec(width, hidden_units, "relu", 0.0, l2))
        width = hidden_units
    return nn.mlp_init(specs, seed)


def build_regressor(latent, units, dropout, l2, seed) -> nn.Mlp:
    return nn.mlp_init([nn.LayerSpec(latent, units, "relu", dropout, l2),
                        nn.LayerSpec(units, 1, "identity", dropout, l2)], seed)


def build_critic(latent, units, seed) -> nn.Mlp:
    return nn.mlp_init([nn.LayerSpec(latent, units, "relu"),
                        nn.LayerSpec(units, 1, "identity")], seed)


class _Trainer:
    """Alternating optimisation of (extractor, regressor) and the critic.

    With ``xb is None`` only the regression step runs, which is exactly the
    plain network baseline.  The two steps touch disjoint parameter sets.
    """

    def __init__(self, extractor, regressor, critic, lr, critic_lr, alpha, beta, n_critic,
                 streams):
        self.extractor, self.regressor, self.critic = extractor, regressor, critic
        self.alpha, self.beta, self.n_critic = alpha, beta, n_critic
        self.opt = nn.AdamState.for_params(extractor.params + regressor.params, lr)
        self.critic_opt = (nn.AdamState.for_params(critic.params, critic_lr)
                           if critic is not None else None)
        self.batch_rng = np.random.default_rng(streams["batches"])
        self.mask_rng = np.random.default_rng(streams["dropout"])
        self.adv_rng = np.random.default_rng(streams["adversary"])
        self._extractor_nol2 = nn._without_l2(extractor)

    def latent(self, x):
        return nn.mlp_forward(self.extractor, x).output

    def critic_step(self, ha, hb):
        """One ascent step on ``mean f_c(ha) - mean f_c(hb) - beta * penalty``."""
        k_a, k_b = len(ha), len(hb)
        u = self.adv_rng.random((min(k_a, k_b), 1))
        hhat = u * ha[:len(u)] + (1.0 - u) * hb[:len(u)]
        acts_a = nn.mlp_forward(self.critic, ha)
        acts_b = nn.mlp_forward(self.critic, hb)
        ga, _ = nn.mlp_backward(self.critic, acts_a, np.full((k_a, 1), 1.0 / k_a))
        gb, _ = nn.mlp_backward(self.critic, acts_b, np.full((k_b, 1), -1.0 / k_b))
        penalty, gp = nn.gradient_penalty(self.critic, hhat)
        # Adam minimizes, so hand it the negated ascent direction
        grads = [-(a + b) + self.beta * p for a, b, p in zip(ga, gb, gp)]
        nn.adam_step(self.critic.params, grads, self.critic_opt)
        gap = float(acts_a.output.mean() - acts_b.output.mean())
        return gap, penalty

    def outer_step(self, xa, ya, xb=None):
        """Descend MAE + alpha * (mean f_c(f_e(xa)) - mean f_c(f_e(xb))).

        Returns ``(mae, critic_gap)``; the gap carries no penalty term.
        """
        k = len(xa)
        ea = nn.mlp_forward(self.extractor, xa)
        ra = nn.mlp_forward(self.regressor, ea.output, True, self.mask_rng)
        resid = ra.output[:, 0] - ya
        mae = float(np.mean(np.abs(resid)))
        greg, glat = nn.mlp_backward(self.regressor, ra, (np.sign(resid) / k)[:, None])
        gap = 0.0
        if xb is not None:
            eb = nn.mlp_forward(self.extractor, xb)
            fa = nn.mlp_forward(self.critic, ea.output).output
            fb = nn.mlp_forward(self.critic, eb.output).output
            gap = float(fa.mean() - fb.mean())
            glat = glat + self.alpha * nn.critic_input_gradient(self.critic, ea.output) / k
            gb_lat = -self.alpha * nn.critic_input_gradient(self.critic, eb.output) / len(xb)
            gext, _ = nn.mlp_backward(self.extractor, ea, glat)
            gext_b, _ = nn.mlp_backward(self._extractor_nol2, eb, gb_lat)
            gext = [a + b for a, b in zip(gext, gext_b)]
        else:
            gext, _ = nn.mlp_backward(self.extractor, ea, glat)
        nn.adam_step(self.extractor.params + self.regressor.params, gext + greg, self.opt)
        return mae, gap

    def run_epoch(self, xa_all, ya_all, batch_size, xb_all=None):
        n = len(xa_all)
        perm = self.batch_rng.permutation(n)
        maes, gaps, pens = [], [], []
        for lo in range(0, n, batch_size):
            idx = perm[lo:lo + batch_size]
            xa, ya = xa_all[idx], ya_all[idx]
            xb = None
            if xb_all is not None:
                xb = xb_all[self.adv_rng.integers(0, len(xb_all), len(idx))]
                ha, hb = self.latent(xa), self.latent(xb)
                for _ in range(self.n_critic):
                    _, pen = self.critic_step(ha, hb)
                    pens.append(pen)
            mae, gap = self.outer_step(xa, ya, xb)
            if not np.isfinite(mae):
                raise TrainingDivergedError("regression loss became non-finite")
            maes.append(mae)
            gaps.append(gap)
        return float(np.mean(maes)), float(np.mean(gaps)), float(np.mean(pens)) if pens else 0.0


class DNNRegressor(RegressorMixin, BaseEstimator):
    """Plain feed-forward regressor trained on historical data with MAE."""

    def __init__(self, hidden_units=64, extractor_layers=1, regressor_units=8,
                 learning_rate=0.0005, epochs=50, batch_size=32, l2=1e-5, dropout=0.4,
                 random_state=0):
        self.hidden_units = hidden_units
        self.extractor_layers = extractor_layers
        self.regressor_units = regressor_units
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.l2 = l2
        self.dropout = dropout
        self.random_state = random_state

    # subclasses swap in a critic
    _adversarial = False

    def _init_networks(self, d):
        s = _streams(self.random_state)
        self.extractor_ = build_extractor(d, self.hidden_units, self.extractor_layers, self.l2,
                                          s["extractor"])
        self.regressor_ = build_regressor(self.hidden_units, self.regressor_units, self.dropout,
                                          self.l2, s["regressor"])
        self.critic_ = None
        return s

    def _prepare(self, X, y, X_ref=None, y_ref=None):
        X, y = check_X_y(X, y)
        X_ref = X if X_ref is None else check_array(X_ref)
        y_ref = y if y_ref is None else np.asarray(y_ref, dtype=float)
        self.standardizer_ = Standardizer("A").fit(X_ref)
        self.y_mean_ = float(np.mean(y_ref))
        self.y_scale_ = float(max(np.std(y_ref), 1e-8))
        self.n_features_in_ = X.shape[1]
        return self.standardizer_.transform(X), (y - self.y_mean_) / self.y_scale_

    def _trainer(self, streams):
        return _Trainer(self.extractor_, self.regressor_, None, self.learning_rate, 0.0,
                        0.0, 0.0, 1, streams)

    def fit(self, X, y, X_ref=None, y_ref=None):
        """Train on ``(X, y)``.  ``X_ref``/``y_ref`` (default: the training data)
        supply the standardization moments and target scaling."""
        Z, t = self._prepare(X, y, X_ref, y_ref)
        streams = self._init_networks(Z.shape[1])
        self.trainer_ = self._trainer(streams)
        self.log_ = TrainLog()
        for epoch in range(self.epochs):
            try:
                mae, gap, pen = self.trainer_.run_epoch(Z, t, self.batch_size)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch}") from None
            self.log_.reg_loss.append(mae * self.y_scale_)
            self.log_.wasserstein.append(gap)
            self.log_.grad_penalty.append(pen)
        return self

    def continue_training(self, X, y, epochs, learning_rate):
        """Further MAE epochs on ``(X, y)`` with a fresh optimizer (fine-tuning)."""
        check_is_fitted(self, "regressor_")
        X, y = check_X_y(X, y)
        if epochs <= 0 or len(X) == 0:
            return self
        Z = self.standardizer_.transform(X)
        t = (y - self.y_mean_) / self.y_scale_
        self.trainer_.opt = nn.AdamState.for_params(
            self.extractor_.params + self.regressor_.params, learning_rate)
        for _ in range(epochs):
            mae, _, _ = self.trainer_.run_epoch(Z, t, self.batch_size)
            self.log_.reg_loss.append(mae * self.y_scale_)
            self.log_.wasserstein.append(0.0)
            self.log_.grad_penalty.append(0.0)
        return self

    def latent(self, X):
        check_is_fitted(self, "extractor_")
        return nn.mlp_forward(self.extractor_, self.standardizer_.transform(X)).output

    def predict(self, X):
        h = self.latent(X)
        out = nn.mlp_forward(self.regressor_, h).output[:, 0]
        return out * self.y_scale_ + self.y_mean_

    @property
    def parameters_(self) -> list[np.ndarray]:
        return self.extractor_.params + self.regressor_.params


class WDGRLRegressor(DNNRegressor):
    """Adds a Wasserstein critic on the extractor output.

    Each mini-batch first runs ``n_critic`` ascent steps on the critic gap
    minus ``beta`` times the gradient penalty (computed on random latent
    interpolates), then one descent step on MAE plus ``alpha`` times the
    un-penalized gap.  Deployment batches are drawn with replacement to
    match the historical batch size.
    """

    def __init__(self, hidden_units=64, extractor_layers=1, regressor_units=8,
                 learning_rate=0.0005, epochs=50, batch_size=32, l2=1e-5, dropout=0.4,
                 random_state=0, alpha=1.0, beta=1.0, n_critic=5, critic_units=16,
                 critic_learning_rate=None):
        super().__init__(hidden_units, extractor_layers, regressor_units, learning_rate, epochs,
                         batch_size, l2, dropout, random_state)
        self.alpha = alpha
        self.beta = beta
        self.n_critic = n_critic
        self.critic_units = critic_units
        self.critic_learning_rate = critic_learning_rate

    def _init_networks(self, d):
        s = super()._init_networks(d)
        self.critic_ = build_critic(self.hidden_units, self.critic_units, s["critic"])
        return s

    def _trainer(self, streams):
        if self.alpha < 0 or self.beta < 0 or self.n_critic < 1:
            raise ValueError("need alpha >= 0, beta >= 0 and n_critic >= 1")
        clr = self.learning_rate if self.critic_learning_rate is None else self.critic_learning_rate
        return _Trainer(self.extractor_, self.regressor_, self.critic_, self.learning_rate, clr,
                        self.alpha, self.beta, self.n_critic, streams)

    def fit(self, X, y, X_target=None):
        if X_target is None:
            raise ValueError("WDGRLRegressor.fit needs unlabeled deployment features X_target")
        Z, t = self._prepare(X, y)
        Zb = self.standardizer_.transform(X_target)
        streams = self._init_networks(Z.shape[1])
        self.trainer_ = self._trainer(streams)
        self.log_ = TrainLog()
        for epoch in range(self.epochs):
            try:
                mae, gap, pen = self.trainer_.run_epoch(Z, t, self.batch_size, Zb)
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(f"{exc} at epoch {epoch}") from None
            if not (np.isfinite(gap) and np.isfinite(pen)):
                raise TrainingDivergedError(f"critic diverged at epoch {epoch}")
            self.log_.reg_loss.append(mae * self.y_scale_)
            self.log_.wasserstein.append(gap)
            self.log_.grad_penalty.append(pen)
        return self

    def critic_gap(self, X_a, X_b) -> float:
        """Critic estimate of the latent Wasserstein distance on full samples."""
        fa = nn.mlp_forward(self.critic_, self.latent(X_a)).output
        fb = nn.mlp_forward(self.critic_, self.latent(X_b)).output
        return float(fa.mean() - fb.mean())


def estimate_wasserstein(h_a, h_b, critic_units=16, beta=10.0, steps=3000, batch_size=64,
                         learning_rate=1e-3, seed=0) -> float:
    """Train a gradient-penalized critic on fixed samples and return its gap.

    For a critic that is free to match the penalized optimum the estimate is
    biased upward by roughly ``W**2 / (2 * beta)`` in one dimension, hence
    the default ``beta = 10``.
    """
    h_a, h_b = check_array(h_a, name="h_a"), check_array(h_b, name="h_b")
    s = _streams(seed)
    critic = build_critic(h_a.shape[1], critic_units, s["critic"])
    dummy = nn.mlp_init([nn.LayerSpec(h_a.shape[1], 1, "identity")], 0)
    trainer = _Trainer(dummy, dummy, critic, 0.0, learning_rate, 0.0, beta, 1, s)
    rng = np.random.default_rng(s["batches"])
    for _ in range(steps):
        trainer.critic_step(h_a[rng.integers(0, len(h_a), batch_size)],
                            h_b[rng.integers(0, len(h_b), batch_size)])
    fa = nn.mlp_forward(critic, h_a).output.mean()
    fb = nn.mlp_forward(critic, h_b).output.mean()
    return float(fa - fb)


# -- functional API ----------------------------------------------------------------

DNN_DEFAULTS = {"hidden_units": 64, "extractor_layers": 1, "regressor_units": 8,
                "learning_rate": 0.0005, "epochs": 50, "batch_size": 32, "l2": 1e-5,
                "dropout": 0.4}


def _arch(hyper):
    return {k: hyper[k] for k in DNN_DEFAULTS if k in hyper}


def fit_dnn(X, y, hyper=None, seed=0) -> DNNRegressor:
    return DNNRegressor(**{**DNN_DEFAULTS, **_arch(hyper or {})}, random_state=seed).fit(X, y)


def fit_wdgrl(X, y, X_target, hyper=None, seed=0) -> WDGRLRegressor:
    hyper = dict(hyper or {})
    extra = {k: hyper[k] for k in ("alpha", "beta", "n_critic", "critic_units",
                                   "critic_learning_rate") if k in hyper}
    model = WDGRLRegressor(**{**DNN_DEFAULTS, **_arch(hyper)}, random_state=seed, **extra)
    return model.fit(X, y, X_target)


def reveal_window(X_b, y_b, window=30.0):
    """Deployment orders whose throughput time is below ``window`` days."""
    y_b = np.asarray(y_b, dtype=float)
    keep = y_b < window
    return check_array(X_b)[keep], y_b[keep]


def fit_retrained(X, y, X_revealed, y_revealed, hyper=None, seed=0) -> DNNRegressor:
    """One network trained on historical plus revealed deployment orders.

    Scaling moments stay those of the historical data, so an empty reveal
    set reproduces :func:`fit_dnn` exactly.
    """
    X, y = check_X_y(X, y)
    Xr = np.asarray(X_revealed, dtype=float).reshape(-1, X.shape[1])
    yr = np.asarray(y_revealed, dtype=float).ravel()
    model = DNNRegressor(**{**DNN_DEFAULTS, **_arch(hyper or {})}, random_state=seed)
    return model.fit(np.vstack([X, Xr]), np.concatenate([y, yr]), X_ref=X, y_ref=y)


def fit_finetuned(X, y, X_revealed, y_revealed, hyper=None, seed=0, finetune_epochs=10,
                  lr_factor=0.1) -> DNNRegressor:
    """Historical fit followed by a few low-learning-rate epochs on revealed orders."""
    model = fit_dnn(X, y, hyper, seed)
    Xr = np.asarray(X_revealed, dtype=float).reshape(-1, model.n_features_in_)
    return model.continue_training(Xr, y_revealed, finetune_epochs,
                                   model.learning_rate * lr_factor)
