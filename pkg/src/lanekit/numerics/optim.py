"""AdamW with linear warm-up and cosine decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class WarmupCosineSchedule:
    """Linear ramp for the first `warmup_iters` steps, cosine decay after.

    Steps are 1-based: step t <= warmup gives base_lr * t / warmup, step t in
    (warmup, total] follows a half cosine from base_lr down to min_lr.
    """

    base_lr: float = 1e-3
    warmup_iters: int = 800
    total_iters: int = 3000
    min_lr: float = 0.0

    def lr(self, step: int) -> float:
        if self.warmup_iters > 0 and step <= self.warmup_iters:
            return self.base_lr * step / self.warmup_iters
        span = max(1, self.total_iters - self.warmup_iters)
        t = min(step - self.warmup_iters, span)
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (
            1.0 + math.cos(math.pi * t / span))


@dataclass
class OptimState:
    """Per-parameter Adam moments plus the shared step counter."""

    schedule: WarmupCosineSchedule = field(default_factory=WarmupCosineSchedule)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    moments: dict = field(default_factory=dict)  # name -> (m, v)

    def slot(self, p: Tensor):
        if p.name is None:
            raise ValueError("optimizer parameters must be named")
        if p.name not in self.moments:
            self.moments[p.name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = self.moments[p.name]
        if m.shape != p.data.shape:
            raise ValueError(
                f"moment shape {m.shape} does not match parameter "
                f"'{p.name}' shape {p.data.shape}")
        return m, v


def adamw_step(params, grads, state: OptimState) -> float:
    """One decoupled-weight-decay Adam update, in place. Returns the lr used.

    `grads` maps each parameter Tensor to its gradient array. A non-finite
    gradient aborts with the parameter's name before any slot is touched.
    """
    params = list(params)
    for p in params:
        g = grads[p]
        if not np.isfinite(g).all():
            raise FloatingPointError(
                f"non-finite gradient for parameter '{p.name}'")

    state.step += 1
    t = state.step
    lr = state.schedule.lr(t)
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    for p in params:
        g = grads[p].astype(p.data.dtype, copy=False)
        m, v = state.slot(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return lr
