"""Dense feed-forward networks with hand-written gradients.

The engine is intentionally small: a network is a chain of dense layers,
each with a ReLU or identity activation and optional inverted dropout on
its *input*.  Forward passes keep every intermediate so that backward can
return gradients for the parameters and for the batch itself.  Gradients
with respect to inputs are what the critic's gradient penalty needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu", "identity")


class DimensionMismatchError(ValueError):
    """Layer dimensions or batch shapes do not line up."""


class StaleActivationError(ValueError):
    """Backward was called with activations from a different network."""


@dataclass(frozen=True)
class LayerSpec:
    input_dim: int
    output_dim: int
    activation: str = "relu"
    dropout_rate: float = 0.0
    l2_strength: float = 0.0

    def __post_init__(self):
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("layer dimensions must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "activation": self.activation,
            "dropout_rate": self.dropout_rate,
            "l2_strength": self.l2_strength,
        }


@dataclass
class Mlp:
    """Chain of dense layers.  ``weights[k]`` has shape (input_dim, output_dim)."""

    specs: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    rng_seed: int = 0

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_dim

    @property
    def output_dim(self) -> int:
        return self.specs[-1].output_dim

    @property
    def params(self) -> list[np.ndarray]:
        """Flat parameter list ``[W0, b0, W1, b1, ...]``; arrays are shared, not copied."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(list(self.specs), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.rng_seed)

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "layers": [
                {**s.to_dict(), "weights": w.tolist(), "bias": b.tolist()}
                for s, w, b in zip(self.specs, self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Mlp":
        specs, weights, biases = [], [], []
        for layer in payload["layers"]:
            spec = LayerSpec(
                int(layer["input_dim"]), int(layer["output_dim"]), layer["activation"],
                float(layer["dropout_rate"]), float(layer["l2_strength"]),
            )
            w = np.asarray(layer["weights"], dtype=float).reshape(spec.input_dim, spec.output_dim)
            specs.append(spec)
            weights.append(w)
            biases.append(np.asarray(layer["bias"], dtype=float).reshape(spec.output_dim))
        _check_chain(specs)
        return cls(specs, weights, biases, int(payload.get("rng_seed", 0)))


@dataclass
class Activations:
    """Everything a forward pass produced; consumed by :func:`mlp_backward`."""

    inputs: np.ndarray
    layer_inputs: list[np.ndarray]  # input to each layer after dropout
    pre: list[np.ndarray]
    post: list[np.ndarray]
    masks: list[np.ndarray | None] = field(default_factory=list)

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    learning_rate: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, learning_rate=0.0005, beta1=0.9, beta2=0.999, epsilon=1e-8):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params],
                   0, learning_rate, beta1, beta2, epsilon)


def _check_chain(specs):
    if not specs:
        raise DimensionMismatchError("a network needs at least one layer")
    for k in range(len(specs) - 1):
        if specs[k].output_dim != specs[k + 1].input_dim:
            raise DimensionMismatchError(
                f"layer {k} outputs {specs[k].output_dim} but layer {k + 1} expects "
                f"{specs[k + 1].input_dim}"
            )


def mlp_init(specs, seed: int) -> Mlp:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    specs = list(specs)
    _check_chain(specs)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for s in specs:
        bound = 1.0 / np.sqrt(s.input_dim)
        weights.append(rng.uniform(-bound, bound, size=(s.input_dim, s.output_dim)))
        biases.append(np.zeros(s.output_dim))
    return Mlp(specs, weights, biases, seed)


def mlp_forward(m: Mlp, batch, train_mode: bool = False, rng=None) -> Activations:
    """Run the network on ``batch`` (n x input_dim).

    In train mode, each layer with a positive ``dropout_rate`` zeroes its
    inputs with that probability and rescales survivors by ``1/(1-rate)``.
    ``rng`` may be a Generator or an int seed; it is only consulted in train
    mode.  Eval mode touches no state.
    """
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise DimensionMismatchError(
            f"expected batch of shape (n, {m.input_dim}), got {x.shape}"
        )
    if train_mode and not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    layer_inputs, pre, post, masks = [], [], [], []
    a = x
    for spec, w, b in zip(m.specs, m.weights, m.biases):
        mask = None
        if train_mode and spec.dropout_rate > 0:
            keep = 1.0 - spec.dropout_rate
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        layer_inputs.append(a)
        z = a @ w + b
        a = np.maximum(z, 0.0) if spec.activation == "relu" else z
        pre.append(z)
        post.append(a)
        masks.append(mask)
    return Activations(x, layer_inputs, pre, post, masks)


def mlp_backward(m: Mlp, acts: Activations, upstream_grad):
    """Backpropagate ``upstream_grad`` (dLoss/dOutput, n x output_dim).

    Returns ``(param_grads, input_grads)`` where ``param_grads`` follows the
    ``[W0, b0, W1, b1, ...]`` layout of :attr:`Mlp.params` and includes the
    weight-decay term ``2 * l2_strength * W``.
    """
    g = np.asarray(upstream_grad, dtype=float)
    if len(acts.pre) != len(m.specs) or any(
        z.shape[1] != s.output_dim for z, s in zip(acts.pre, m.specs)
    ):
        raise StaleActivationError("activations do not belong to this network")
    if g.shape != acts.output.shape:
        raise StaleActivationError(
            f"upstream gradient shape {g.shape} != output shape {acts.output.shape}"
        )
    grads: list[np.ndarray] = [None] * (2 * len(m.specs))
    for k in range(len(m.specs) - 1, -1, -1):
        spec = m.specs[k]
        if spec.activation == "relu":
            g = g * (acts.pre[k] > 0)
        gw = acts.layer_inputs[k].T @ g
        if spec.l2_strength:
            gw = gw + 2.0 * spec.l2_strength * m.weights[k]
        grads[2 * k] = gw
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ m.weights[k].T
        if acts.masks[k] is not None:
            g = g * acts.masks[k]
    return grads, g


def l2_penalty(m: Mlp) -> float:
    return float(sum(s.l2_strength * np.sum(w * w) for s, w in zip(m.specs, m.weights)))


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied in place.  Returns ``(params, state)``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionMismatchError("params, grads and optimizer state differ in length")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionMismatchError(f"param {p.shape} vs grad {g.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def critic_input_gradient(critic: Mlp, h) -> np.ndarray:
    """Per-sample gradient of a scalar critic with respect to its input."""
    if critic.output_dim != 1:
        raise DimensionMismatchError("critic must have a scalar output")
    acts = mlp_forward(critic, h)
    _, gin = mlp_backward(_without_l2(critic), acts, np.ones_like(acts.output))
    return gin


def _without_l2(m: Mlp) -> Mlp:
    if not any(s.l2_strength for s in m.specs):
        return m
    specs = [LayerSpec(s.input_dim, s.output_dim, s.activation, s.dropout_rate, 0.0)
             for s in m.specs]
    return Mlp(specs, m.weights, m.biases, m.rng_seed)


def gradient_penalty(critic: Mlp, h):
    """Mean of ``(||grad_h f_c(h)||_2 - 1)^2`` and its gradient for the critic parameters.

    Only critics with one or two layers are supported.  The ReLU activation
    pattern is treated as fixed, so the parameter gradient is exact away from
    kinks; bias gradients are zero in that regime.
    """
    if critic.output_dim != 1:
        raise DimensionMismatchError("critic must have a scalar output")
    if len(critic.specs) > 2:
        raise ValueError("gradient penalty supports critics of depth <= 2")
    h = np.asarray(h, dtype=float)
    n = h.shape[0]
    grads = [np.zeros_like(p) for p in critic.params]
    if len(critic.specs) == 1:
        w = critic.weights[0][:, 0]
        norm = np.linalg.norm(w)
        value = (norm - 1.0) ** 2
        if norm > 0:
            grads[0] = (2.0 * (norm - 1.0) / norm * w)[:, None]
        return float(value), grads

    w1, w2 = critic.weights[0], critic.weights[1][:, 0]
    z = h @ w1 + critic.biases[0]
    gate = (z > 0).astype(float) if critic.specs[0].activation == "relu" else np.ones_like(z)
    gw = gate * w2  # n x k, d f / d hidden pre-activation
    g = gw @ w1.T  # n x l
    norms = np.linalg.norm(g, axis=1)
    value = float(np.mean((norms - 1.0) ** 2))
    safe = np.where(norms > 0, norms, 1.0)
    u = (2.0 / n) * ((norms - 1.0) / safe)[:, None] * g
    u[norms == 0] = 0.0
    grads[0] = u.T @ gw
    grads[2] = (gate * (u @ w1)).sum(axis=0)[:, None]
    return value, grads
