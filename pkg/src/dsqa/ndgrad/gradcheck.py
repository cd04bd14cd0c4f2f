"""Central finite differences against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import DTYPE, DiffArray, Tape
from .ops import mul, sum as dsum


def _projected(fn, arrays, weights) -> float:
    out = fn(*arrays)
    return float(np.sum(out.value.astype(np.float64) * weights))


def numeric_gradient(fn: Callable[..., DiffArray], inputs: Sequence[np.ndarray], weights: np.ndarray,
                     step: float = 1e-2) -> list[np.ndarray]:
    """Gradient of ``sum(fn(*inputs) * weights)`` by central differences.

    The function is only ever evaluated forward, in inference mode.
    """
    base = [np.array(x, dtype=DTYPE) for x in inputs]
    grads = []
    for k, x in enumerate(base):
        g = np.zeros(x.shape, dtype=np.float64)
        for i in np.ndindex(x.shape):
            orig = x[i]
            x[i] = orig + step
            up = _projected(fn, [DiffArray(a) for a in base], weights)
            x[i] = orig - step
            down = _projected(fn, [DiffArray(a) for a in base], weights)
            x[i] = orig
            g[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def analytic_gradient(fn: Callable[..., DiffArray], inputs: Sequence[np.ndarray],
                      weights: np.ndarray) -> list[np.ndarray]:
    leaves = [DiffArray(np.array(x, dtype=DTYPE), requires_grad=True) for x in inputs]
    with Tape() as tape:
        out = fn(*leaves)
        loss = dsum(mul(out, weights.astype(DTYPE)))
    return tape.gradient(loss, leaves)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[..., DiffArray], inputs: Sequence[np.ndarray], step: float = 1e-2,
                    seed: int = 0) -> list[float]:
    """Relative error per input between analytic and finite-difference gradients."""
    out = fn(*[DiffArray(np.asarray(x, dtype=DTYPE)) for x in inputs])
    weights = np.random.default_rng(seed).standard_normal(out.shape)
    ana = analytic_gradient(fn, inputs, weights)
    num = numeric_gradient(fn, inputs, weights, step)
    return [relative_error(a, n) for a, n in zip(ana, num)]
