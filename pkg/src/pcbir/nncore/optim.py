"""Adaptive-moment (Adam) parameter updates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .layers import Parameter


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        for label, beta in (("beta1", self.beta1), ("beta2", self.beta2)):
            if not 0.0 < beta < 1.0:
                raise ValueError(f"{label} must lie in (0, 1), got {beta}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


def optimizer_step(params: Iterable[Parameter], config: OptimizerConfig, step_index: int,
                   learning_rate: float | None = None) -> None:
    """Apply one bias-corrected Adam update in place.

    Gradients are left as they are; the caller resets them. Parameters whose
    ``grad`` is None were not reached by the loss and are skipped, moments
    included. ``learning_rate`` overrides the configured rate (for schedules).
    """
    if step_index < 1:
        raise ValueError(f"step_index must be >= 1, got {step_index}")
    params = list(params)
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradientError(f"non-finite gradient in parameter {p.name!r}")

    lr = config.learning_rate if learning_rate is None else learning_rate
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** step_index
    correction2 = 1.0 - b2 ** step_index
    step_size = lr * math.sqrt(correction2) / correction1
    eps_hat = config.epsilon * math.sqrt(correction2)
    for p in params:
        if p.grad is None:
            continue
        g = p.grad
        p.first_moment = (b1 * p.first_moment + (1.0 - b1) * g).astype(p.data.dtype)
        p.second_moment = (b2 * p.second_moment + (1.0 - b2) * g * g).astype(p.data.dtype)
        update = step_size * p.first_moment / (np.sqrt(p.second_moment) + eps_hat)
        p.data = (p.data - update).astype(p.data.dtype)


class Adam:
    """Stateful convenience wrapper that tracks the step index."""

    def __init__(self, params: Iterable[Parameter], config: OptimizerConfig, step_index: int = 0):
        self.params = list(params)
        self.config = config
        self.step_index = step_index

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, learning_rate: float | None = None) -> None:
        self.step_index += 1
        optimizer_step(self.params, self.config, self.step_index, learning_rate)
