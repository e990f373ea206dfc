"""Adam and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from .tensor import Tensor


@dataclass(frozen=True)
class LrSchedule:
    lr_max: float
    lr_min: float = 0.0
    warmup_ratio: float = 0.05
    total_steps: int = 1
    kind: str = "cosine"  # or "constant": warmup then flat at lr_max

    def __post_init__(self):
        if self.total_steps < 1:
            raise InvalidArgument(f"total_steps must be positive, got {self.total_steps}")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise InvalidArgument(f"warmup_ratio must lie in [0, 1], got {self.warmup_ratio}")
        if self.lr_min > self.lr_max:
            raise InvalidArgument("lr_min must not exceed lr_max")
        if self.kind not in ("cosine", "constant"):
            raise InvalidArgument(f"unknown schedule kind {self.kind!r}")

    @property
    def warmup_steps(self) -> int:
        return round(self.warmup_ratio * self.total_steps)


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Learning rate at ``step`` in ``[0, total_steps]``.

    Linear ramp from 0 to ``lr_max`` over the warmup steps, then cosine decay
    to ``lr_min`` at ``total_steps``.
    """
    if not 0 <= step <= schedule.total_steps:
        raise InvalidArgument(f"step {step} outside [0, {schedule.total_steps}]")
    warm = schedule.warmup_steps
    if step < warm:
        return schedule.lr_max * step / warm
    if schedule.kind == "constant":
        return schedule.lr_max
    decay = schedule.total_steps - warm
    if decay == 0:
        return schedule.lr_max
    progress = (step - warm) / decay
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class Adam:
    """Adam with bias correction. State is keyed by parameter position in ``params``."""

    params: list[Tensor]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in self.params]
            self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params: list[Tensor], state: Adam | None, lr: float) -> Adam:
    """Apply one Adam update using each parameter's ``.grad``; returns the state."""
    state = state or Adam(params)
    state.step(lr)
    return state
