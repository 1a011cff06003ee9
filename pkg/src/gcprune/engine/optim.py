"""SGD with momentum and a cosine learning-rate schedule."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tensor import Tensor


def cosine_lr(epoch: float, total_epochs: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from ``lr0`` at epoch 0 to ``lr_min`` at ``total_epochs``."""
    frac = min(max(epoch / total_epochs, 0.0), 1.0)
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * frac))


class SGD:
    def __init__(self, params: Sequence[Tensor], momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def step(self, lr: float) -> None:
        sgd_step(self.params, lr, self.momentum, self.velocity, self.weight_decay)
        self.steps += 1

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float, momentum: float = 0.0,
             velocity: list[np.ndarray] | None = None, weight_decay: float = 0.0) -> None:
    """In-place update ``v = momentum*v + grad; p -= lr*v`` and clear grads."""
    if not lr > 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    missing = [i for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise ValueError(f"{len(missing)} parameter(s) have no gradient (first index {missing[0]})")
    if velocity is None:
        velocity = [np.zeros_like(p.data) for p in params]
    for p, v in zip(params, velocity):
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        if momentum:
            v *= momentum
            v += g
            p.data -= lr * v
        else:
            p.data -= lr * g
        p.grad = None
