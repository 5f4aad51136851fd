"""Proposal-to-ground-truth assignment and the training losses.

Matching is one-to-one on geometric cost alone (1 - signed line IoU) so it
is deterministic and independent of the current classifier state. The four
loss terms - focal classification, signed line-IoU regression, masked L1
direction, and attention cross-entropy - combine linearly into the total.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Lane, line_iou
from .numerics import Tensor, maximum, minimum, tensor
from .refine import AttentionTarget
from .sketch import DirectionMap

log = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
SCORE_EPS = 1e-7


@dataclass
class MatchResult:
    """One-to-one proposal/ground-truth pairing."""

    pairs: list                # [(proposal index, gt index), ...]
    labels: np.ndarray         # (L,) 1.0 for matched proposals

    def __post_init__(self):
        props = [i for i, _ in self.pairs]
        gts = [m for _, m in self.pairs]
        if len(set(props)) != len(props) or len(set(gts)) != len(gts):
            raise ValueError(f"duplicate index in match pairs {self.pairs}")


@dataclass
class LossWeights:
    w_cls: float = 2.0
    w_reg: float = 1.0
    w_dir: float = 0.05
    w_attn: float = 0.05

    def __post_init__(self):
        for name, v in vars(self).items():
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")


@dataclass
class LossReport:
    l_cls: float
    l_reg: float
    l_dir: float
    l_attn: float
    total: float


def build_cost(proposals: list, gts: list, radius: float) -> np.ndarray:
    """(L, M) matching cost: 1 - signed line IoU per proposal/gt pair.

    Vectorized over proposals: all proposals share one row grid, so each
    gt's IoU against every proposal reduces to array arithmetic over the
    commonly valid rows.
    """
    cost = np.ones((len(proposals), len(gts)))
    if not proposals or not gts:
        return cost
    prop_xs = np.stack([p.xs for p in proposals])          # (L, N)
    prop_valid = np.stack([p.valid() for p in proposals])
    for m, gt in enumerate(gts):
        common = prop_valid & gt.valid()                   # (L, N)
        rows = common.any(axis=1)
        xa = prop_xs
        xb = gt.xs[None, :]
        inter = (np.minimum(xa, xb) - np.maximum(xa, xb) + 2 * radius)
        union = (np.maximum(xa, xb) - np.minimum(xa, xb) + 2 * radius)
        iou = (inter * common).sum(axis=1) / np.maximum(
            (union * common).sum(axis=1), 1e-12)
        cost[rows, m] = 1.0 - iou[rows]
    return cost


def hungarian_match(cost: np.ndarray) -> MatchResult:
    """Minimum-cost one-to-one assignment of all gts to distinct proposals.

    Exact dynamic program over subsets of ground truths; among equal-cost
    optima the lexicographically smallest pair set wins (pairs compared as
    the sorted (proposal, gt) sequence). Requires at least as many
    proposals as ground truths.
    """
    n_props, n_gts = cost.shape
    if n_gts == 0:
        return MatchResult(pairs=[], labels=np.zeros(n_props))
    if n_props < n_gts:
        raise ValueError(
            f"{n_gts} ground truths but only {n_props} proposals; enlarge "
            f"the proposal grid so every lane can be matched")
    full = (1 << n_gts) - 1
    subsets = np.arange(full + 1)
    members = [(subsets >> m) & 1 == 1 for m in range(n_gts)]
    # best[i][S]: cheapest way to assign gt subset S using proposals i.. .
    best = np.full((n_props + 1, full + 1), np.inf)
    best[n_props, 0] = 0.0
    for i in range(n_props - 1, -1, -1):
        row = best[i + 1].copy()
        for m in range(n_gts):
            has = members[m]
            cand = cost[i, m] + best[i + 1, subsets[has] ^ (1 << m)]
            np.minimum.at(row, subsets[has], cand)
        best[i] = row
    pairs = []
    s = full
    for i in range(n_props):
        if not s:
            break
        # Assigning proposal i (to the smallest workable gt) beats skipping
        # it whenever optimal: earlier proposal indices sort first.
        assigned = False
        for m in range(n_gts):
            if s & (1 << m) and cost[i, m] + best[i + 1, s ^ (1 << m)] == best[i, s]:
                pairs.append((i, m))
                s ^= 1 << m
                assigned = True
                break
        if not assigned:
            assert best[i + 1, s] == best[i, s]
    labels = np.zeros(n_props)
    labels[[i for i, _ in pairs]] = 1.0
    return MatchResult(pairs=pairs, labels=labels)


def focal_loss(scores: Tensor, labels: np.ndarray, alpha: float = FOCAL_ALPHA,
               gamma: float = FOCAL_GAMMA) -> Tensor:
    """Mean focal loss over all proposals.

    p_t is the predicted probability of the true class; the (1 - p_t)^gamma
    factor downweights easy examples and alpha rebalances the classes.
    Probabilities are clamped to [eps, 1 - eps] before the log.
    """
    labels = np.asarray(labels, np.float64)
    p_t = scores * labels + (1.0 - scores) * (1.0 - labels)
    a_t = alpha * labels + (1.0 - alpha) * (1.0 - labels)
    p_t = p_t.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
    focal = (1.0 - p_t) ** gamma
    return (-(focal * p_t.log() * a_t)).mean()


def liou_loss(pred_xs: Tensor, gt: Lane, radius: float) -> Tensor:
    """1 - signed line IoU against the gt over the gt's valid rows.

    The signed intersection keeps a gradient alive when the lanes do not
    overlap. If the gt has no valid rows the loss is the constant 1.
    """
    rows = gt.valid()
    if not rows.any():
        log.warning("liou_loss: ground truth has no valid rows")
        return tensor(1.0)
    xa = pred_xs[np.flatnonzero(rows)]
    xb = tensor(gt.xs[rows])
    two_r = 2.0 * radius
    inter = minimum(xa, xb) - maximum(xa, xb) + two_r
    union = maximum(xa, xb) - minimum(xa, xb) + two_r
    return 1.0 - inter.sum() / union.sum()


def direction_loss(pred_norm: Tensor, gt: DirectionMap) -> Tensor:
    """Mean L1 between predicted and gt angles (both as angle/180).

    Only cells carrying ground-truth supervision count; an empty mask
    yields zero. `pred_norm` is the raw normalized-angle grid from the
    direction head, shaped like the gt map.
    """
    if gt.mask is None or not gt.mask.any():
        return tensor(0.0)
    idx = np.flatnonzero(gt.mask.reshape(-1))
    pred = pred_norm.reshape(-1)[idx]
    target = tensor(gt.angles.reshape(-1)[idx] / 180.0)
    return (pred - target).abs().mean()


def attention_loss(logits: Tensor, target: AttentionTarget) -> Tensor:
    """Cross-entropy of attention rows against one-hot targets.

    Averaged over the (positive proposal, group) pairs that have a defined
    target; zero when nothing is matched.
    """
    n_pairs = int(target.group_valid.sum())
    if n_pairs == 0:
        return tensor(0.0)
    log_rows = logits.log_softmax(axis=1)   # softmax over source proposals j
    picked = log_rows * tensor(target.weights)
    return -(picked.sum()) / float(n_pairs)


def total_loss(l_cls: Tensor, l_reg: Tensor, l_dir: Tensor, l_attn: Tensor,
               weights: LossWeights | None = None) -> tuple:
    """Weighted sum of the four terms; returns (total tensor, report)."""
    weights = weights or LossWeights()
    parts = {"classification": l_cls, "regression": l_reg,
             "direction": l_dir, "attention": l_attn}
    for name, part in parts.items():
        if not np.isfinite(part.data).all():
            raise FloatingPointError(f"{name} loss is not finite")
    total = (weights.w_cls * l_cls + weights.w_reg * l_reg
             + weights.w_dir * l_dir + weights.w_attn * l_attn)
    report = LossReport(l_cls=float(l_cls.data), l_reg=float(l_reg.data),
                        l_dir=float(l_dir.data), l_attn=float(l_attn.data),
                        total=float(total.data))
    return total, report
