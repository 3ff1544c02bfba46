"""Central finite differences, used as the independent oracle for tape gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    out = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return out


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Max |a-b| scaled by max(|a|, |b|, 1e-8) over the whole array."""
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-8)
    return float(np.abs(a - b).max(initial=0.0) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5) -> float:
    """Worst relative error between tape and finite-difference gradients of a scalar loss."""
    for leaf in leaves:
        leaf.grad = None
    backward(loss_fn())
    worst = 0.0

    def value() -> float:
        # recording stays on: losses that take an inner gradient need the tape
        return loss_fn().item()

    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros(leaf.shape)
        numeric = numeric_grad(value, leaf.data, h)
        worst = max(worst, rel_error(analytic, numeric))
    return worst
