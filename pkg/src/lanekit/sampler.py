"""Adaptive multi-scale feature sampling for lane proposals.

Each proposal is probed at `n_points` rows spread over its vertical extent.
At every probe point the feature pyramid is sampled bilinearly on all
levels, and the per-level samples are blended with Gaussian weights
w_s = exp(-|2^z - s|) / sum_s' exp(-|2^z - s'|) driven by a learnable
per-point scale embedding z. Points outside a level's grid read zeros.
The blended point features are finally projected group-wise into a single
c-dimensional vector per proposal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Lane
from .nn import Linear
from .numerics import Tensor, bilinear_sample, concat, parameter, tensor


@dataclass
class FeaturePyramid:
    """Ordered (stride, feature grid) pairs with a common channel count.

    Each grid is a (d, H/stride, W/stride) tensor; cell (r, c) of a
    stride-s level is centered at image point ((c + 0.5) s, (r + 0.5) s).
    """

    levels: list  # [(stride, Tensor), ...]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        strides = [s for s, _ in self.levels]
        if any(b <= a for a, b in zip(strides, strides[1:])):
            raise ValueError(f"strides must strictly increase, got {strides}")
        dims = {feat.shape[0] for _, feat in self.levels}
        if len(dims) != 1:
            raise ValueError(f"levels disagree on channel count: {dims}")

    @property
    def strides(self) -> list:
        return [s for s, _ in self.levels]

    @property
    def channels(self) -> int:
        return self.levels[0][1].shape[0]


def make_scale_embedding(n_points: int, strides, init: float | None = None,
                         name: str = "sampler.z") -> Tensor:
    """Learnable per-point scale embedding, initialized at the middle level."""
    if init is None:
        init = math.log2(sorted(strides)[len(strides) // 2])
    return parameter(np.full(n_points, init, np.float32), name)


def scale_weights(z, strides) -> Tensor:
    """Per-level Gaussian weights of Eq.-style scale blending.

    `z` is a tensor (or array) of scale embeddings; returns weights shaped
    z.shape + (len(strides),) that sum to 1 over the last axis:
    w_s = exp(-|2^z - s|) normalized over the stride set.
    """
    strides = list(strides)
    if not strides:
        raise ValueError("strides must be nonempty")
    z = z if isinstance(z, Tensor) else tensor(np.asarray(z, np.float64))
    two_z = (z * math.log(2.0)).exp()
    lead = two_z.shape
    diff = two_z.reshape(*lead, 1) - tensor(np.asarray(strides, np.float64))
    return (-diff.abs()).softmax(axis=-1)


def sample_rows(y_min: float, y_max: float, n_points: int) -> np.ndarray:
    """Equally spaced probe rows over a vertical extent, inclusive."""
    return np.linspace(float(y_min), float(y_max), n_points)


def sample_grid_points(pyramid: FeaturePyramid, xs, ys, z) -> Tensor:
    """Blend pyramid samples at arbitrary image points.

    `xs`, `ys` are (L, P) arrays or tensors of image coordinates (P points
    per proposal); `z` is the (P,) scale embedding shared across proposals.
    Returns an (L, P, d) tensor, differentiable in the pyramid features,
    the coordinates, and z.
    """
    xs = xs if isinstance(xs, Tensor) else tensor(np.asarray(xs, np.float64))
    ys = ys if isinstance(ys, Tensor) else tensor(np.asarray(ys, np.float64))
    n_lanes, n_points = xs.shape
    weights = scale_weights(z, pyramid.strides)  # (P, S)
    flat_x, flat_y = xs.reshape(-1), ys.reshape(-1)
    out = None
    for k, (stride, feat) in enumerate(pyramid.levels):
        gx = flat_x / float(stride) - 0.5
        gy = flat_y / float(stride) - 0.5
        sampled = bilinear_sample(feat, gx, gy)  # (L*P, d)
        sampled = sampled.reshape(n_lanes, n_points, feat.shape[0])
        w_k = weights[:, k:k + 1].reshape(1, n_points, 1)
        term = sampled * w_k
        out = term if out is None else out + term
    return out


def interp_matrix(xs: np.ndarray, ys: np.ndarray, stride: int,
                  hg: int, wg: int) -> np.ndarray:
    """Dense bilinear weights for fixed probe points on one pyramid level.

    Returns (P, hg*wg) float32 W such that W @ grid.reshape(C, -1).T
    equals bilinear_sample(grid, xs/stride - 0.5, ys/stride - 0.5) for the
    same zero-padding rule. Only useful when the coordinates carry no
    gradient; the pipeline uses it to sample a whole batch with one
    matrix product per level.
    """
    gx = np.asarray(xs, np.float64).reshape(-1) / float(stride) - 0.5
    gy = np.asarray(ys, np.float64).reshape(-1) / float(stride) - 0.5
    x0 = np.floor(gx)
    y0 = np.floor(gy)
    fx, fy = gx - x0, gy - y0
    x0i, y0i = x0.astype(np.int64), y0.astype(np.int64)
    out = np.zeros((gx.size, hg * wg), np.float32)
    rows = np.arange(gx.size)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi, yi = x0i + dx, y0i + dy
            ok = (xi >= 0) & (xi < wg) & (yi >= 0) & (yi < hg)
            flat = np.clip(yi, 0, hg - 1) * wg + np.clip(xi, 0, wg - 1)
            out[rows, flat] += (wx * wy * ok).astype(np.float32)
    return out


def sample_proposal_features(pyramid: FeaturePyramid, lane: Lane, z,
                             n_points: int) -> Tensor:
    """Probe one lane at n_points rows of its extent; returns (n_points, d)."""
    ys = sample_rows(lane.y_min, lane.y_max, n_points)
    xs = np.interp(ys, lane.rows(), lane.xs)
    return sample_grid_points(pyramid, xs[None, :], ys[None, :], z)[0]


class GroupedProjection:
    """Project (L, P, d) point features to (L, c) proposal features.

    Channels split into G contiguous groups of c/G; group g is a learned
    linear map (+ ReLU) of the flattened features of points
    floor(g P / G) .. floor((g+1) P / G) - 1, so each channel group only
    sees its own stretch of the lane.
    """

    def __init__(self, rng, n_points: int, d: int, c: int, groups: int,
                 name: str = "project"):
        if c % groups != 0:
            raise ValueError(f"channels {c} not divisible by {groups} groups")
        self.n_points, self.d, self.c, self.groups = n_points, d, c, groups
        self.bounds = [(g * n_points) // groups for g in range(groups + 1)]
        self.maps = [
            Linear(rng, (self.bounds[g + 1] - self.bounds[g]) * d, c // groups,
                   f"{name}.group{g}")
            for g in range(groups)
        ]

    def __call__(self, raw: Tensor) -> Tensor:
        lead = raw.shape[:-2]
        pieces = []
        for g, fc in enumerate(self.maps):
            lo, hi = self.bounds[g], self.bounds[g + 1]
            flat = raw[..., lo:hi, :].reshape(*lead, (hi - lo) * self.d)
            pieces.append(fc(flat).relu())
        return concat(pieces, axis=-1)

    def params(self) -> list:
        out = []
        for fc in self.maps:
            out.extend(fc.params())
        return out
