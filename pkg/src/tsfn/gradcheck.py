"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, zero_grad


def numeric_grad(forward: Callable[[], Tensor], param: Tensor, index: int, step: float) -> float:
    flat = param.data.reshape(-1)
    orig = flat[index]
    h = step * max(1.0, abs(orig))
    flat[index] = orig + h
    up = forward().item()
    flat[index] = orig - h
    down = forward().item()
    flat[index] = orig
    return (up - down) / (2.0 * h)


def analytic_grads(forward: Callable[[], Tensor], params: Sequence[Tensor]) -> list[np.ndarray]:
    zero_grad(params)
    backward(forward())
    return [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]


def grad_check(forward: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
               max_samples: int | None = None, seed: int = 0,
               analytic: list[np.ndarray] | None = None) -> float:
    """Largest relative error between backprop and central differences.

    Relative error is ``|a - n| / max(|a|, |n|, 1e-8)``. ``forward`` must rebuild
    the graph from the current parameter values on every call. When
    ``max_samples`` is set, that many entries are drawn per parameter tensor.
    ``analytic`` overrides the backprop gradients (used for fault injection).
    """
    grads = analytic if analytic is not None else analytic_grads(forward, params)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        n = p.data.size
        idx = np.arange(n) if max_samples is None or n <= max_samples \
            else rng.choice(n, size=max_samples, replace=False)
        flat_g = g.reshape(-1)
        for i in idx:
            num = numeric_grad(forward, p, int(i), step)
            ana = float(flat_g[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
