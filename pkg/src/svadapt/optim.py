"""Adam with per-group learning-rate schedules.

The schedule ramps linearly from zero to the peak rate over the warm-up
steps, then decays linearly to a floor of `floor_ratio * peak` (1/20th by
default) at the final step. Frozen params are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Param


@dataclass(frozen=True)
class LrSchedule:
    peak: float
    warmup_steps: int
    total_steps: int
    floor_ratio: float = 0.05

    def at(self, step: int) -> float:
        """Learning rate for 1-based update index `step`."""
        if step <= self.warmup_steps:
            return self.peak * step / max(self.warmup_steps, 1)
        floor = self.peak * self.floor_ratio
        if step >= self.total_steps:
            return floor
        span = self.total_steps - self.warmup_steps
        frac = (step - self.warmup_steps) / span
        return self.peak - (self.peak - floor) * frac


class Adam:
    """Adam over named parameter groups, each with its own schedule."""

    def __init__(self, groups, beta1: float = 0.9, beta2: float = 0.98, eps: float = 1e-8):
        # groups: list of (params, LrSchedule)
        self.groups = [([p for p in ps if p.trainable], sched) for ps, sched in groups]
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {}
        self._v = {}
        for ps, _ in self.groups:
            for p in ps:
                self._m[id(p)] = np.zeros_like(p.data)
                self._v[id(p)] = np.zeros_like(p.data)

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for params, sched in self.groups:
            lr = sched.at(self.t)
            for p in params:
                m = self._m[id(p)]
                v = self._v[id(p)]
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * p.grad * p.grad
                p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for params, _ in self.groups:
            for p in params:
                p.zero_grad()


def zero_grads(params) -> None:
    for p in params:
        if isinstance(p, Param):
            p.zero_grad()
