"""Small parameterized building blocks on top of the autodiff tensor.

Every block exposes `params()` returning its learnable tensors in a stable
order; parameter names are dotted paths so optimizer state and checkpoints
can address them individually.
"""

from __future__ import annotations

import numpy as np

from .numerics import Tensor, parameter, tensor


class Linear:
    """Affine map on the last axis: y = x @ weight + bias."""

    def __init__(self, rng, in_dim: int, out_dim: int, name: str,
                 scale: float | None = None, zero_init: bool = False):
        if zero_init:
            w = np.zeros((in_dim, out_dim))
        else:
            if scale is None:
                scale = 1.0 / np.sqrt(in_dim)
            w = rng.standard_normal((in_dim, out_dim)) * scale
        self.weight = parameter(w.astype(np.float32), f"{name}.weight")
        self.bias = parameter(np.zeros(out_dim, np.float32), f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def params(self) -> list:
        return [self.weight, self.bias]


class LayerNorm:
    """Normalize the last axis to zero mean / unit variance, then scale."""

    def __init__(self, dim: int, name: str, eps: float = 1e-5):
        self.gain = parameter(np.ones(dim, np.float32), f"{name}.gain")
        self.bias = parameter(np.zeros(dim, np.float32), f"{name}.bias")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gain + self.bias

    def params(self) -> list:
        return [self.gain, self.bias]


class MLP:
    """Two affine layers with a ReLU in between."""

    def __init__(self, rng, in_dim: int, hidden: int, out_dim: int, name: str,
                 zero_last: bool = False):
        self.fc1 = Linear(rng, in_dim, hidden, f"{name}.fc1",
                          scale=np.sqrt(2.0 / in_dim))
        self.fc2 = Linear(rng, hidden, out_dim, f"{name}.fc2",
                          zero_init=zero_last)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())

    def params(self) -> list:
        return self.fc1.params() + self.fc2.params()


def collect_params(*blocks) -> list:
    """Flatten the parameter lists of several blocks, preserving order."""
    out = []
    for block in blocks:
        out.extend(block.params())
    return out
