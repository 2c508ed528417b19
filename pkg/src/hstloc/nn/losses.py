"""Loss functions returning the batch-mean loss and its gradient."""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, ShapeError

EPS = 1e-7
LOSSES = ("mse", "bce", "ce")


def loss_eval(kind: str, prediction: np.ndarray, target: np.ndarray, clamp: bool = True):
    """Return ``(loss, d loss / d prediction)``.

    ``mse`` and ``bce`` average over every element (batch and features);
    ``ce`` sums over classes and averages over the batch. Probabilities are
    clamped to ``[EPS, 1 - EPS]`` unless ``clamp`` is false, in which case
    values outside the open unit interval raise :class:`DomainError`.
    """
    if prediction.shape != target.shape:
        raise ShapeError(f"prediction {prediction.shape} vs target {target.shape}")
    if kind == "mse":
        diff = prediction - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size

    if kind not in ("bce", "ce"):
        raise ValueError(f"unknown loss {kind!r}")
    if clamp:
        p = np.clip(prediction, EPS, 1.0 - EPS)
    else:
        if np.any(prediction <= 0) or np.any(prediction >= 1):
            raise DomainError(f"{kind} prediction outside (0, 1)")
        p = prediction

    if kind == "bce":
        loss = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p))
        grad = (p - target) / (p * (1 - p)) / p.size
        return float(loss), grad.astype(prediction.dtype, copy=False)

    n = prediction.shape[0] if prediction.ndim > 1 else 1
    loss = -np.sum(target * np.log(p)) / n
    return float(loss), (-target / p / n).astype(prediction.dtype, copy=False)
