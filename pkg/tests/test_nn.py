import json

import numpy as np
import pytest

from shiftsched import nn
from helpers import central_difference, gradient_check, max_relative_error, random_mlp


def test_init_bounds_and_zero_bias():
    m = nn.mlp_init([nn.LayerSpec(4, 8), nn.LayerSpec(8, 1, "identity")], seed=3)
    assert np.all(np.abs(m.weights[0]) <= 0.5)
    assert np.all(np.abs(m.weights[1]) <= 1 / np.sqrt(8))
    assert all(np.all(b == 0) for b in m.biases)


def test_seeded_init_is_reproducible():
    specs = [nn.LayerSpec(3, 5), nn.LayerSpec(5, 1, "identity")]
    a, b = nn.mlp_init(specs, 7), nn.mlp_init(specs, 7)
    assert all(np.array_equal(p, q) for p, q in zip(a.params, b.params))


def test_chain_mismatch_rejected():
    with pytest.raises(nn.DimensionMismatchError):
        nn.mlp_init([nn.LayerSpec(3, 5), nn.LayerSpec(4, 1)], 0)


def test_forward_batch_shape_checked():
    m = nn.mlp_init([nn.LayerSpec(3, 2)], 0)
    with pytest.raises(nn.DimensionMismatchError):
        nn.mlp_forward(m, np.zeros((4, 2)))


def test_identity_network_with_bias_only():
    m = nn.mlp_init([nn.LayerSpec(2, 1, "identity")], 0)
    m.weights[0][:] = 0.0
    m.biases[0][:] = 4.5
    assert np.all(nn.mlp_forward(m, np.random.default_rng(0).normal(size=(6, 2))).output == 4.5)


def test_relu_hand_example():
    m = nn.mlp_init([nn.LayerSpec(2, 2), nn.LayerSpec(2, 1, "identity")], 0)
    m.weights[0][:] = [[1.0, -1.0], [2.0, 1.0]]
    m.biases[0][:] = [0.0, -0.5]
    m.weights[1][:] = [[1.0], [3.0]]
    m.biases[1][:] = [0.25]
    # hidden pre = (1*1 + 2*1, -1 + 1 - 0.5) = (3, -0.5) -> relu (3, 0)
    out = nn.mlp_forward(m, np.array([[1.0, 1.0]])).output
    assert out[0, 0] == pytest.approx(3.25)


def test_eval_mode_ignores_dropout():
    m = nn.mlp_init([nn.LayerSpec(5, 4, "relu", 0.5), nn.LayerSpec(4, 1, "identity", 0.5)], 1)
    x = np.random.default_rng(0).normal(size=(10, 5))
    assert np.array_equal(nn.mlp_forward(m, x).output, nn.mlp_forward(m, x).output)


def test_dropout_is_inverted():
    m = nn.mlp_init([nn.LayerSpec(1, 1, "identity", 0.4)], 0)
    m.weights[0][:] = 1.0
    x = np.ones((200_000, 1))
    out = nn.mlp_forward(m, x, True, np.random.default_rng(0)).output
    assert out.mean() == pytest.approx(1.0, abs=0.01)
    assert set(np.unique(out)) <= {0.0, 1 / 0.6}


@pytest.mark.parametrize("dropout", [False, True])
def test_backward_matches_finite_differences(dropout):
    rng = np.random.default_rng(11)
    for _ in range(5):
        m = random_mlp(rng, max_width=8, dropout=dropout)
        x = rng.normal(size=(4, m.input_dim))
        t = rng.normal(size=(4, m.output_dim))
        assert gradient_check(m, x, t, mask_seed=5 if dropout else None) < 1e-4


def test_backward_rejects_foreign_activations():
    a = nn.mlp_init([nn.LayerSpec(3, 4), nn.LayerSpec(4, 1, "identity")], 0)
    b = nn.mlp_init([nn.LayerSpec(3, 5), nn.LayerSpec(5, 1, "identity")], 0)
    acts = nn.mlp_forward(a, np.zeros((2, 3)))
    with pytest.raises(nn.StaleActivationError):
        nn.mlp_backward(b, acts, np.ones((2, 1)))


def test_adam_first_step_moves_by_learning_rate():
    p = [np.array([1.0, -2.0])]
    state = nn.AdamState.for_params(p, learning_rate=0.1)
    nn.adam_step(p, [np.array([3.0, -0.5])], state)
    np.testing.assert_allclose(p[0], [0.9, -1.9], atol=1e-7)
    assert state.step == 1


def test_adam_minimizes_quadratic():
    p = [np.array([5.0])]
    state = nn.AdamState.for_params(p, learning_rate=0.05)
    for _ in range(2000):
        nn.adam_step(p, [2 * p[0]], state)
    assert abs(p[0][0]) < 1e-2


def test_critic_input_gradient_of_linear_critic():
    c = nn.mlp_init([nn.LayerSpec(3, 1, "identity")], 0)
    g = nn.critic_input_gradient(c, np.zeros((4, 3)))
    np.testing.assert_allclose(g, np.tile(c.weights[0][:, 0], (4, 1)))


@pytest.mark.parametrize("depth", [1, 2])
def test_gradient_penalty_parameter_gradient(depth):
    rng = np.random.default_rng(depth)
    specs = [nn.LayerSpec(3, 6), nn.LayerSpec(6, 1, "identity")] if depth == 2 else [
        nn.LayerSpec(3, 1, "identity")]
    c = nn.mlp_init(specs, 4)
    h = rng.normal(size=(7, 3))
    _, grads = nn.gradient_penalty(c, h)
    for p, g in zip(c.params, grads):
        num = central_difference(lambda: nn.gradient_penalty(c, h)[0], p)
        assert max_relative_error(g, num, floor=1e-6) < 1e-4


def test_gradient_penalty_zero_for_unit_slope():
    c = nn.mlp_init([nn.LayerSpec(2, 1, "identity")], 0)
    c.weights[0][:] = [[0.6], [0.8]]
    value, grads = nn.gradient_penalty(c, np.ones((3, 2)))
    assert value == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(grads[0], 0)


def test_gradient_penalty_rejects_deep_critic():
    c = nn.mlp_init([nn.LayerSpec(2, 2), nn.LayerSpec(2, 2), nn.LayerSpec(2, 1, "identity")], 0)
    with pytest.raises(ValueError):
        nn.gradient_penalty(c, np.zeros((1, 2)))


def test_serialization_round_trip_is_exact():
    m = random_mlp(np.random.default_rng(2), dropout=True)
    back = nn.Mlp.from_dict(json.loads(json.dumps(m.to_dict())))
    assert back.specs == m.specs
    assert all(np.array_equal(p, q) for p, q in zip(m.params, back.params))


def test_l2_penalty_value():
    m = nn.mlp_init([nn.LayerSpec(2, 1, "identity", 0.0, 0.5)], 0)
    m.weights[0][:] = [[1.0], [2.0]]
    assert nn.l2_penalty(m) == pytest.approx(2.5)
