"""Proposal refinement: grouped cross-attention over lane segments plus
classification and regression heads.

The attention block treats each proposal's feature as G segment slices.
For group g, every proposal's full c-dim feature forms a query; keys and
values come from the other proposals' g-th segment slice. This lets a
proposal pull evidence about each stretch of the lane from whichever
proposal covers that stretch best. Attention weights carry explicit
supervision: for a proposal matched to a ground-truth lane, the target for
group g is the proposal geometrically nearest to the ground truth on
segment g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import SEGMENT_DISTANCE_SENTINEL
from .nn import LayerNorm, Linear, collect_params
from .numerics import Tensor, concat, maximum, minimum, tensor


@dataclass
class AttentionTarget:
    """One-hot attention supervision for matched proposals.

    weights[i, j, g] = 1 iff proposal i is matched to a ground truth and
    proposal j is the nearest one to that ground truth on segment g.
    Rows of unmatched proposals stay zero. group_valid[i, g] is False when
    the matched ground truth has no rows in segment g (no defined target).
    """

    weights: np.ndarray      # (L, L, G) float
    positives: np.ndarray    # (L,) bool
    group_valid: np.ndarray  # (L, G) bool


@dataclass
class RefinementOutput:
    """Differentiable head outputs for one image's L proposals."""

    scores: Tensor      # (L,) foreground probability
    xs: Tensor          # (L, N) refined x per row
    y_min: Tensor       # (L,)
    y_max: Tensor       # (L,)
    attention: Tensor   # (L, L, G) post-softmax weights
    attn_logits: Tensor  # (L, L, G) pre-softmax scores


class SegmentAttention:
    """Grouped cross-attention with a feed-forward block (pre-norm)."""

    def __init__(self, rng, c: int, groups: int, name: str = "lsam"):
        if c % groups != 0:
            raise ValueError(f"channels {c} not divisible by {groups} groups")
        self.c, self.groups = c, groups
        self.cg = c // groups
        self.ln_attn = LayerNorm(c, f"{name}.ln_attn")
        self.ln_ffn = LayerNorm(c, f"{name}.ln_ffn")
        self.q = [Linear(rng, c, self.cg, f"{name}.q{g}")
                  for g in range(groups)]
        self.k = [Linear(rng, self.cg, self.cg, f"{name}.k{g}")
                  for g in range(groups)]
        self.v = [Linear(rng, self.cg, self.cg, f"{name}.v{g}")
                  for g in range(groups)]
        self.ffn1 = Linear(rng, c, 2 * c, f"{name}.ffn1",
                           scale=math.sqrt(2.0 / c))
        self.ffn2 = Linear(rng, 2 * c, c, f"{name}.ffn2")

    def __call__(self, x: Tensor):
        """x: (..., L, c) -> (x', A, logits) with A, logits (..., L, L, G)."""
        lead = x.shape[:-2]
        n = x.shape[-2]
        xn = self.ln_attn(x)
        outs, attns, logits = [], [], []
        for g in range(self.groups):
            lo, hi = g * self.cg, (g + 1) * self.cg
            seg = xn[..., lo:hi]
            q = self.q[g](xn)                       # (..., L, cg)
            k = self.k[g](seg)
            v = self.v[g](seg)
            scores = (q @ k.swapaxes(-1, -2)) / math.sqrt(self.cg)
            a = scores.softmax(axis=-1)             # (..., L, L)
            outs.append(a @ v)
            attns.append(a.reshape(*lead, n, n, 1))
            logits.append(scores.reshape(*lead, n, n, 1))
        x2 = x + concat(outs, axis=-1)
        x3 = x2 + self.ffn2(self.ffn1(self.ln_ffn(x2)).relu())
        return x3, concat(attns, axis=-1), concat(logits, axis=-1)

    def params(self) -> list:
        return collect_params(self.ln_attn, self.ln_ffn, *self.q, *self.k,
                              *self.v, self.ffn1, self.ffn2)


class Classifier:
    """Pointwise two-layer foreground head with logistic output."""

    def __init__(self, rng, c: int, name: str = "classify"):
        self.fc1 = Linear(rng, c, c, f"{name}.fc1", scale=math.sqrt(2.0 / c))
        self.fc2 = Linear(rng, c, 1, f"{name}.fc2", zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        """x: (..., L, c) -> (..., L) probabilities."""
        out = self.fc2(self.fc1(x).relu())
        return out.reshape(*out.shape[:-1]).sigmoid()

    def logits(self, x: Tensor) -> Tensor:
        out = self.fc2(self.fc1(x).relu())
        return out.reshape(*out.shape[:-1])

    def params(self) -> list:
        return collect_params(self.fc1, self.fc2)


class Regressor:
    """Pointwise head predicting per-row x offsets and the y extent."""

    def __init__(self, rng, c: int, n_rows: int, h: float,
                 name: str = "regress"):
        self.n_rows, self.h = n_rows, h
        self.fc1 = Linear(rng, c, c, f"{name}.fc1", scale=math.sqrt(2.0 / c))
        self.fc2 = Linear(rng, c, n_rows + 2, f"{name}.fc2", zero_init=True)
        # The two extent channels must NOT start equal: with y_min == y_max
        # the min/max ordering splits tied gradients symmetrically, the
        # endpoint losses (one pushing down, one up) cancel exactly, and
        # identical updates keep the tie forever. Start them apart at a
        # broad prior (~0.27h .. 0.88h).
        self.fc2.bias.data[n_rows] = -1.0
        self.fc2.bias.data[n_rows + 1] = 2.0

    def __call__(self, x: Tensor, sketch_xs) -> tuple:
        """(..., L, c) + (..., L, N) sketch -> (xs, y_min, y_max).

        The head adds its per-row output to the sketched x coordinates in
        pixels; the two extent channels pass through a logistic scaled to
        image height and are ordered so y_min <= y_max always holds.
        """
        if not isinstance(sketch_xs, Tensor):
            sketch_xs = tensor(np.asarray(sketch_xs, np.float64))
        out = self.fc2(self.fc1(x).relu())
        xs = sketch_xs + out[..., :self.n_rows]
        ends = out[..., self.n_rows:].sigmoid() * self.h
        a, b = ends[..., 0], ends[..., 1]
        return xs, minimum(a, b), maximum(a, b)

    def params(self) -> list:
        return collect_params(self.fc1, self.fc2)


def segment_distance_matrix(prop_xs: np.ndarray, prop_valid: np.ndarray,
                            gt_xs: np.ndarray, gt_valid: np.ndarray,
                            groups: int) -> np.ndarray:
    """Mean |x| distance of every proposal to one GT per segment: (L, G).

    Segments with no commonly valid rows read SEGMENT_DISTANCE_SENTINEL.
    Vectorized equivalent of geometry.segment_distance over all proposals.
    """
    n_props, n = prop_xs.shape
    out = np.full((n_props, groups), SEGMENT_DISTANCE_SENTINEL)
    for g in range(groups):
        lo, hi = (g * n) // groups, ((g + 1) * n) // groups
        common = prop_valid[:, lo:hi] & gt_valid[lo:hi]
        diff = np.abs(prop_xs[:, lo:hi] - gt_xs[lo:hi]) * common
        counts = common.sum(axis=1)
        has = counts > 0
        out[has, g] = diff[has].sum(axis=1) / counts[has]
    return out


def attention_targets(matches, proposal_lanes, gt_lanes,
                      groups: int) -> AttentionTarget:
    """Build one-hot attention supervision from matched (proposal, gt) pairs.

    For each matched proposal i and segment g the target is the proposal
    nearest to i's ground truth on that segment (ties -> smallest index).
    """
    n_props = len(proposal_lanes)
    weights = np.zeros((n_props, n_props, groups))
    positives = np.zeros(n_props, dtype=bool)
    group_valid = np.zeros((n_props, groups), dtype=bool)
    if not matches:
        return AttentionTarget(weights, positives, group_valid)
    prop_xs = np.stack([lane.xs for lane in proposal_lanes])
    prop_valid = np.stack([lane.valid() for lane in proposal_lanes])
    for i, m in matches:
        gt = gt_lanes[m]
        positives[i] = True
        dists = segment_distance_matrix(prop_xs, prop_valid, gt.xs,
                                        gt.valid(), groups)
        for g in range(groups):
            if (dists[:, g] >= SEGMENT_DISTANCE_SENTINEL).all():
                continue  # ground truth has no rows in this segment
            weights[i, int(np.argmin(dists[:, g])), g] = 1.0
            group_valid[i, g] = True
    return AttentionTarget(weights, positives, group_valid)
