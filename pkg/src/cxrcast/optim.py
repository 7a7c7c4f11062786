"""AdamW, global-norm gradient clipping, and the warmup-cosine schedule."""

from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


class AdamW:
    """AdamW with decoupled weight decay.

    Decay is applied directly to the weights (scaled by the current lr),
    never through the gradient; moments are bias-corrected.
    """

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        """Apply one update using each parameter's accumulated gradient."""
        if lr is None:
            lr = self.lr
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError.binary("adamw_step", p.data.shape, g.shape)
            if self.weight_decay:
                p.data -= np.asarray(lr * self.weight_decay, dtype=p.data.dtype) * p.data
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= np.asarray(lr, dtype=p.data.dtype) * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_global_norm(grads: Iterable[np.ndarray], max_norm: float) -> float:
    """Scale `grads` in place so their global L2 norm is at most `max_norm`.

    Returns the pre-clip global norm for logging.
    """
    if max_norm <= 0.0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    grads = list(grads)
    total = 0.0
    for g in grads:
        total += float(np.sum(g.astype(np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= np.asarray(factor, dtype=g.dtype)
    return norm


class WarmupCosineSchedule:
    """Linear ramp from 0 to the peak, then cosine decay to exactly 0."""

    def __init__(self, peak_lr: float, total_steps: int, warmup_fraction: float = 0.10):
        if peak_lr <= 0.0:
            raise ValueError(f"peak_lr must be positive, got {peak_lr}")
        if total_steps < 1:
            raise ValueError(f"total_steps must be >= 1, got {total_steps}")
        if not 0.0 <= warmup_fraction < 1.0:
            raise ValueError(f"warmup_fraction must be in [0, 1), got {warmup_fraction}")
        self.peak_lr = float(peak_lr)
        self.total_steps = int(total_steps)
        self.warmup_steps = int(round(warmup_fraction * total_steps))

    def lr_at(self, step: int) -> float:
        if not 0 <= step <= self.total_steps:
            raise ValueError(
                f"step {step} outside schedule range [0, {self.total_steps}]"
            )
        if step < self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        span = self.total_steps - self.warmup_steps
        if span == 0:
            return 0.0 if step >= self.total_steps else self.peak_lr
        frac = (step - self.warmup_steps) / span
        return self.peak_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
