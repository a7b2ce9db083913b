"""AdamW and the one-cycle learning-rate schedule."""

from __future__ import annotations

import math

import numpy as np

from ..errors import PoisonedGradientError, ScheduleRangeError
from .params import ParamStore


def adamw_step(params: ParamStore, lr: float, betas: tuple[float, float] = (0.9, 0.999),
               eps: float = 1e-8, weight_decay: float = 1e-2) -> ParamStore:
    """One AdamW update, in place.

    Every gradient is checked before any parameter moves, so a poisoned
    gradient leaves the store untouched. Entries with no gradient are
    treated as having a zero gradient.
    """
    beta1, beta2 = betas
    for name, p in params.trainable():
        g = p.value.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise PoisonedGradientError(name)
    for _, p in params.trainable():
        g = p.value.grad
        if g is None:
            g = np.zeros_like(p.value.data)
        p.step += 1
        p.m *= beta1
        p.m += (1.0 - beta1) * g
        p.v *= beta2
        p.v += (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        w = p.value.data
        # decoupled decay uses the pre-update weights
        p.value.data = w - lr * weight_decay * w - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


def one_cycle_lr(step: int, total: int, max_lr: float, pct_start: float = 0.3,
                 div_factor: float = 25.0, final_div_factor: float = 1e4) -> float:
    """Cosine warm-up from ``max_lr / div_factor`` to ``max_lr``, then cosine
    annealing down to ``max_lr / final_div_factor``."""
    if total <= 0:
        raise ScheduleRangeError(f"total steps must be positive, got {total}")
    if not 0 <= step <= total:
        raise ScheduleRangeError(f"step {step} outside [0, {total}]")
    start = max_lr / div_factor
    end = max_lr / final_div_factor
    peak = pct_start * total

    def cos_anneal(a: float, b: float, frac: float) -> float:
        return b + (a - b) * (1.0 + math.cos(math.pi * frac)) / 2.0

    if step <= peak:
        return cos_anneal(start, max_lr, step / peak) if peak > 0 else max_lr
    return cos_anneal(max_lr, end, (step - peak) / (total - peak))
