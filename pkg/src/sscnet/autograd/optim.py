"""Momentum SGD."""

from __future__ import annotations

import math

import numpy as np

from .layers import Parameter, StaleGradientError


class SGD:
    """Classic momentum SGD with L2 weight decay on parameters flagged ``decay``.

    ``v = momentum * v + (grad + wd * w); w -= lr * v``. Compact SSC weights
    have no storage at structural zeros, so those stay exactly zero.
    """

    def __init__(self, params: list[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 5e-4):
        if lr < 0 or momentum < 0 or weight_decay < 0:
            raise ValueError("lr, momentum and weight_decay must be non-negative")
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.value) for p in self.params]

    def step(self) -> None:
        stale = [p.name for p in self.params if not p.fresh]
        if stale:
            raise StaleGradientError(f"no new gradient since the last step for {stale[:3]}")
        for p, v in zip(self.params, self.velocity):
            d = p.grad
            if self.weight_decay and p.decay:
                d = d + p.value.dtype.type(self.weight_decay) * p.value
            if self.momentum:
                v *= p.value.dtype.type(self.momentum)
                v += d
                d = v
            p.value -= p.value.dtype.type(self.lr) * d
            p.fresh = False


def lr_at(base: float, schedule: str, epoch: int, epochs: int, step: int = 0,
          steps_per_epoch: int = 1) -> float:
    """Learning rate for ``epoch`` (0-based). ``cosine`` anneals per step."""
    if schedule == "constant":
        return base
    if schedule == "cosine":
        t = (epoch * steps_per_epoch + step) / max(epochs * steps_per_epoch, 1)
        return 0.5 * base * (1 + math.cos(math.pi * t))
    if schedule == "step":
        return base * (0.1 ** (epoch // max(epochs // 3, 1)))
    raise ValueError(f"unknown schedule {schedule!r}")
