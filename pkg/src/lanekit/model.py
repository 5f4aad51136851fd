"""Tiny convolutional backbone with per-scale direction heads.

The backbone downsamples an (N, 3, H, W) batch through five stride-2
convolutions, exposing three feature levels at strides 8, 16 and 32. Each
level feeds two single-convolution heads: a lateral 1x1 projection to the
shared pyramid width, and a 1-channel direction head whose logistic output
scales to an angle in (0, 180) degrees - an all-zero image therefore
predicts 90 degrees everywhere.
"""

from __future__ import annotations

import math

import numpy as np

from .numerics import Tensor, conv2d, parameter, tensor


class Conv:
    """3x3 or 1x1 convolution with bias (He-normal weights, zero bias)."""

    def __init__(self, rng, c_in: int, c_out: int, name: str,
                 kernel: int = 3, stride: int = 1, zero_init: bool = False):
        fan_in = c_in * kernel * kernel
        w = np.zeros((c_out, c_in, kernel, kernel), np.float32) if zero_init \
            else rng.normal(0.0, math.sqrt(2.0 / fan_in),
                            (c_out, c_in, kernel, kernel)).astype(np.float32)
        self.weight = parameter(w, f"{name}.weight")
        self.bias = parameter(np.zeros(c_out, np.float32), f"{name}.bias")
        self.stride = stride

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride)

    def params(self) -> list:
        return [self.weight, self.bias]


class Backbone:
    """Five stride-2 stages; returns features at strides 8, 16, 32."""

    def __init__(self, rng, widths=(16, 32, 64), name: str = "backbone"):
        w8, w16, w32 = widths
        stem = max(4, w8 // 2)
        self.stages = [
            Conv(rng, 3, stem, f"{name}.stem1", stride=2),
            Conv(rng, stem, w8, f"{name}.stem2", stride=2),
            Conv(rng, w8, w8, f"{name}.stage8", stride=2),
            Conv(rng, w8, w16, f"{name}.stage16", stride=2),
            Conv(rng, w16, w32, f"{name}.stage32", stride=2),
        ]
        self.widths = tuple(widths)

    def __call__(self, x: Tensor) -> list:
        """(N, 3, H, W) -> [C8, C16, C32] feature tensors."""
        feats = []
        for i, stage in enumerate(self.stages):
            x = stage(x).relu()
            if i >= 2:
                feats.append(x)
        return feats

    def params(self) -> list:
        return [p for s in self.stages for p in s.params()]


class DirectionHead:
    """1x1 conv to one channel; logistic output scaled to (0, 180) deg."""

    def __init__(self, rng, c_in: int, name: str):
        self.conv = Conv(rng, c_in, 1, name, kernel=1, zero_init=True)

    def __call__(self, feat: Tensor) -> Tensor:
        """(N, C, h, w) -> (N, h, w) normalized angles in (0, 1)."""
        out = self.conv(feat).sigmoid()
        n, _, hd, wd = out.shape
        return out.reshape(n, hd, wd)

    def params(self) -> list:
        return self.conv.params()


class FeatureExtractor:
    """Backbone + per-level lateral projections and direction heads."""

    def __init__(self, rng, widths=(16, 32, 64), d_model: int = 64):
        self.backbone = Backbone(rng, widths)
        self.laterals = [Conv(rng, c, d_model, f"lateral{s}", kernel=1)
                         for c, s in zip(widths, (8, 16, 32))]
        self.dir_heads = [DirectionHead(rng, c, f"direction{s}")
                          for c, s in zip(widths, (8, 16, 32))]
        self.d_model = d_model

    def __call__(self, images: np.ndarray):
        """uint8 (N, H, W, 3) -> (pyramid feats, direction angle maps).

        Returns ([P8, P16, P32] tensors of shape (N, d, h, w),
                 [D8, D16, D32] tensors of shape (N, h, w) in (0, 1)).
        """
        x = tensor(np.ascontiguousarray(
            images.transpose(0, 3, 1, 2), np.float32) / 255.0 - 0.5)
        feats = self.backbone(x)
        pyr = [lat(f).relu() for lat, f in zip(self.laterals, feats)]
        dirs = [head(f) for head, f in zip(self.dir_heads, feats)]
        return pyr, dirs

    def params(self) -> list:
        out = self.backbone.params()
        for m in self.laterals + self.dir_heads:
            out.extend(m.params())
        return out
