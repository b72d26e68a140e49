"""Numerical oracles shared by the test modules."""
import numpy as np

from shiftsched import nn


def random_mlp(rng, depth=None, max_width=64, dropout=False, l2=True):
    depth = depth or int(rng.integers(1, 4))
    dims = [int(rng.integers(1, max_width + 1)) for _ in range(depth + 1)]
    specs = []
    for k in range(depth):
        act = "identity" if k == depth - 1 else str(rng.choice(["relu", "identity"]))
        rate = float(rng.choice([0.0, 0.3])) if dropout else 0.0
        reg = float(rng.choice([0.0, 1e-2])) if l2 else 0.0
        specs.append(nn.LayerSpec(dims[k], dims[k + 1], act, rate, reg))
    return nn.mlp_init(specs, int(rng.integers(1 << 30)))


def loss_and_grads(m, x, target, mask_seed=None):
    """Squared-error loss plus l2 penalty, with masks replayed from ``mask_seed``."""
    train = mask_seed is not None
    acts = nn.mlp_forward(m, x, train, mask_seed)
    diff = acts.output - target
    loss = 0.5 * np.sum(diff ** 2) + nn.l2_penalty(m)
    grads, gin = nn.mlp_backward(m, acts, diff)
    return loss, grads, gin


def loss_only(m, x, target, mask_seed=None):
    acts = nn.mlp_forward(m, x, mask_seed is not None, mask_seed)
    return 0.5 * np.sum((acts.output - target) ** 2) + nn.l2_penalty(m)


def central_difference(f, arr, eps=1e-6):
    out = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + eps
        up = f()
        arr[idx] = old - eps
        down = f()
        arr[idx] = old
        out[idx] = (up - down) / (2 * eps)
    return out


def max_relative_error(a, b, floor=1e-12):
    """Largest absolute gap scaled by the larger of the two tensors' peak magnitude.

    Per-entry ratios blow up on entries near zero, where the finite difference
    is dominated by roundoff, so the scale is taken per tensor.
    """
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def gradient_check(m, x, target, mask_seed=None, eps=1e-6):
    """Max relative error between analytic and central-difference gradients."""
    _, grads, gin = loss_and_grads(m, x, target, mask_seed)
    worst = 0.0
    for p, g in zip(m.params, grads):
        num = central_difference(lambda: loss_only(m, x, target, mask_seed), p, eps)
        worst = max(worst, max_relative_error(g, num))
    num_in = central_difference(lambda: loss_only(m, x, target, mask_seed), x, eps)
    return max(worst, max_relative_error(gin, num_in))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number, passed: bool, detail: str) -> None:
    """Print and keep one pass/fail line; the terminal summary repeats them."""
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
