"""Adam with an inverse-square-root warmup schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .core import ConfigError, Parameter


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    warmup_steps: int = 1000
    clip_norm: float = 1.0


def learning_rate(cfg: AdamConfig, step: int) -> float:
    """Linear warmup to ``cfg.lr`` then decay as ``1/sqrt(step)``; ``step`` is 1-based."""
    step = max(step, 1)
    if cfg.warmup_steps <= 0:
        return cfg.lr
    return cfg.lr * min(step / cfg.warmup_steps, math.sqrt(cfg.warmup_steps / step))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return dict(grads), total
    scale = np.float32(max_norm / (total + 1e-6))
    return {k: g * scale for k, g in grads.items()}, total


def adam_step(
    params: Iterable[Parameter],
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float,
    beta2: float,
    epsilon: float,
    step: int,
) -> None:
    """Bias-corrected Adam update applied in place to each parameter."""
    if step < 1:
        raise ConfigError(f"adam_step: step must be >= 1, got {step}")
    c1 = 1.0 - beta1**step
    c2 = 1.0 - beta2**step
    for p in params:
        g = grads.get(p.name)
        if g is None:
            continue
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * (g * g)
        mhat = p.m / np.float32(c1)
        vhat = p.v / np.float32(c2)
        p.value -= (np.float32(lr) * mhat / (np.sqrt(vhat) + np.float32(epsilon))).astype(np.float32)
