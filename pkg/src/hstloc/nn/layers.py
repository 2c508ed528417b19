"""Layer kinds with explicit forward and backward passes.

Tensors are batch-first numpy arrays. Dense layers take ``(batch, features)``;
Conv1D layers take channels-last sequences ``(batch, length, channels)``.
Every layer is a small immutable description; its parameters live outside it
in a ``dict[str, ndarray]`` so a network can be copied, frozen, or archived
without touching the layer objects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError

ACTIVATIONS = ("elu", "tanh", "sigmoid", "softmax", "linear")


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int

    def __post_init__(self):
        if self.in_features < 1 or self.out_features < 1:
            raise ShapeError(f"Dense extents must be >= 1, got {self.in_features}->{self.out_features}")

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        if shape != (self.in_features,):
            raise ShapeError(f"Dense expects ({self.in_features},), got {shape}")
        return (self.out_features,)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        return {"W": (self.in_features, self.out_features), "b": (self.out_features,)}

    def fans(self) -> tuple[int, int]:
        return self.in_features, self.out_features

    def forward(self, params, x):
        return x @ params["W"] + params["b"]

    def backward(self, params, x, y, grad_y):
        grads = {"W": x.T @ grad_y, "b": grad_y.sum(axis=0)}
        return grad_y @ params["W"].T, grads


@dataclass(frozen=True)
class Conv1D:
    """Valid (unpadded), stride-1 convolution. Weight layout is
    ``(kernel_len, in_channels, out_channels)``."""

    in_channels: int
    out_channels: int
    kernel_len: int

    def __post_init__(self):
        if min(self.in_channels, self.out_channels, self.kernel_len) < 1:
            raise ShapeError(f"Conv1D extents must be >= 1, got {self}")

    def output_shape(self, shape):
        if len(shape) != 2 or shape[1] != self.in_channels:
            raise ShapeError(f"Conv1D expects (length, {self.in_channels}), got {shape}")
        if self.kernel_len > shape[0]:
            raise ShapeError(f"kernel length {self.kernel_len} exceeds sequence length {shape[0]}")
        return (shape[0] - self.kernel_len + 1, self.out_channels)

    def param_shapes(self):
        return {"W": (self.kernel_len, self.in_channels, self.out_channels), "b": (self.out_channels,)}

    def fans(self):
        return self.kernel_len * self.in_channels, self.kernel_len * self.out_channels

    def _columns(self, x):
        # (B, L_out, C, K) -> (B*L_out, K*C) with K as the slow axis, matching W's layout
        win = sliding_window_view(x, self.kernel_len, axis=1)
        b, l_out = win.shape[:2]
        return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(b * l_out, -1), l_out

    def forward(self, params, x):
        cols, l_out = self._columns(x)
        w = params["W"].reshape(-1, self.out_channels)
        return (cols @ w).reshape(x.shape[0], l_out, self.out_channels) + params["b"]

    def backward(self, params, x, y, grad_y):
        b, l_out, _ = grad_y.shape
        cols, _ = self._columns(x)
        g = grad_y.reshape(b * l_out, self.out_channels)
        w = params["W"].reshape(-1, self.out_channels)
        grads = {"W": (cols.T @ g).reshape(params["W"].shape), "b": g.sum(axis=0)}
        dcols = (g @ w.T).reshape(b, l_out, self.kernel_len, self.in_channels)
        grad_x = np.zeros_like(x)
        for k in range(self.kernel_len):
            grad_x[:, k:k + l_out, :] += dcols[:, :, k, :]
        return grad_x, grads


@dataclass(frozen=True)
class Activation:
    fn: str
    alpha: float = 1.0  # ELU only

    def __post_init__(self):
        if self.fn not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.fn!r}; expected one of {ACTIVATIONS}")

    def output_shape(self, shape):
        return shape

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        fn = self.fn
        if fn == "linear":
            return x
        if fn == "elu":
            return np.where(x > 0, x, self.alpha * np.expm1(np.minimum(x, 0)))
        if fn == "tanh":
            return np.tanh(x)
        if fn == "sigmoid":
            # split form avoids overflow in exp for large |x|
            e = np.exp(-np.abs(x))
            return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def backward(self, params, x, y, grad_y):
        fn = self.fn
        if fn == "linear":
            return grad_y, {}
        if fn == "elu":
            return grad_y * np.where(x > 0, 1.0, y + self.alpha), {}
        if fn == "tanh":
            return grad_y * (1.0 - y * y), {}
        if fn == "sigmoid":
            return grad_y * y * (1.0 - y), {}
        inner = (grad_y * y).sum(axis=-1, keepdims=True)
        return y * (grad_y - inner), {}


@dataclass(frozen=True)
class Flatten:
    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1)

    def backward(self, params, x, y, grad_y):
        return grad_y.reshape(x.shape), {}


@dataclass(frozen=True)
class Reshape:
    """Per-sample reshape, e.g. a 130-wide code into a (130, 1) sequence."""

    shape: tuple[int, ...]

    def output_shape(self, shape):
        if int(np.prod(shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {shape} into {self.shape}")
        return tuple(self.shape)

    def param_shapes(self):
        return {}

    def forward(self, params, x):
        return x.reshape((x.shape[0], *self.shape))

    def backward(self, params, x, y, grad_y):
        return grad_y.reshape(x.shape), {}


LayerSpec = Dense | Conv1D | Activation | Flatten | Reshape


def init_params(spec: LayerSpec, seed, dtype=np.float32) -> dict[str, np.ndarray]:
    """Glorot-uniform weights and zero biases, reproducible from ``seed``.

    ``seed`` may be an int or a ``numpy.random.SeedSequence``.
    """
    shapes = spec.param_shapes()
    if not shapes:
        return {}
    for shape in shapes.values():
        if any(d < 1 for d in shape):
            raise ShapeError(f"zero-extent parameter shape {shape}")
    rng = np.random.default_rng(seed)
    fan_in, fan_out = spec.fans()
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return {
        "W": rng.uniform(-limit, limit, size=shapes["W"]).astype(dtype),
        "b": np.zeros(shapes["b"], dtype=dtype),
    }
