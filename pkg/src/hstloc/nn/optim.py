"""Adam and reduce-on-plateau learning-rate scheduling."""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # per-parameter multiplier on learning_rate; missing keys mean 1.0
    lr_scale: dict[str, float] = field(default_factory=dict)

    def clone(self) -> "AdamState":
        return copy.deepcopy(self)


def adam_step(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``.

    Only keys present in ``grads`` are updated.
    """
    state.t += 1
    t = state.t
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for key in sorted(grads):
        g = grads[key]
        p = params[key]
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m, v = state.m[key], state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        lr = state.learning_rate * state.lr_scale.get(key, 1.0)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype, copy=False)


@dataclass
class PlateauSchedulerState:
    current_lr: float
    factor: float = 0.1
    patience: int = 5
    best_metric: float = math.inf
    epochs_since_improvement: int = 0

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must be in (0, 1), got {self.factor}")
        if self.current_lr <= 0:
            raise ValueError("learning rate must be positive")


def plateau_step(state: PlateauSchedulerState, metric: float) -> PlateauSchedulerState:
    """Advance the scheduler by one epoch. Lower metrics are better."""
    if not math.isfinite(metric):
        raise ValueError(f"non-finite metric {metric}")
    if metric < state.best_metric:
        state.best_metric = metric
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
        if state.epochs_since_improvement > state.patience:
            state.current_lr *= state.factor
            state.epochs_since_improvement = 0
    return state
