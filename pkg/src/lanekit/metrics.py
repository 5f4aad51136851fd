"""Detection-quality metrics over per-scene lane lists.

Two scoring conventions are provided: a segmentation-style F1 where lanes
are rasterized into wide strokes and matched one-to-one by mask IoU, and a
pointwise accuracy where predictions are compared row-by-row against
ground truth on a fixed h_samples grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .assign import hungarian_match
from .geometry import Lane, Polyline, lane_from_polyline, mask_iou, \
    rasterize_lane
from .synthdata import ABSENT

RASTER_WIDTH_REF = 30.0 / 1640.0   # stroke width per pixel of image width


@dataclass
class EvalResult:
    """Aggregate detection counts with derived rates."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    accuracy: float | None = None     # pointwise; None for mask-IoU scoring
    breakdown: dict = field(default_factory=dict)

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else 0.0

    def to_dict(self) -> dict:
        out = {"tp": self.tp, "fp": self.fp, "fn": self.fn,
               "precision": self.precision, "recall": self.recall,
               "f1": self.f1}
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
        if self.breakdown:
            out["breakdown"] = {k: v.to_dict()
                                for k, v in self.breakdown.items()}
        return out


def _as_lane(obj, n: int, h: float) -> Lane:
    if isinstance(obj, Lane):
        return obj
    if isinstance(obj, Polyline):
        return lane_from_polyline(obj, n=n, h=h)
    raise TypeError(f"expected Lane or Polyline, got {type(obj).__name__}")


def _match_by_mask_iou(pred_masks, gt_masks, iou_thr):
    """Count TP among a one-to-one min-cost matching on (1 - IoU)."""
    if not pred_masks or not gt_masks:
        return 0, np.zeros((len(pred_masks), len(gt_masks)))
    iou = np.array([[mask_iou(p, g) for g in gt_masks] for p in pred_masks])
    cost = 1.0 - iou
    if cost.shape[0] >= cost.shape[1]:
        pairs = hungarian_match(cost).pairs
    else:
        pairs = [(i, m) for m, i in hungarian_match(cost.T).pairs]
    tp = sum(1 for i, m in pairs if iou[i, m] >= iou_thr)
    return tp, iou


def culane_f1(pred_scenes: list, gt_scenes: list, h: int, w: int,
              iou_thr: float = 0.5, width: float | None = None,
              categories: list | None = None, n_rows: int = 72) -> EvalResult:
    """Stroke-mask F1: rasterized lanes matched one-to-one by mask IoU.

    `pred_scenes` and `gt_scenes` are parallel lists; each entry is the
    scene's list of Lane or Polyline objects. `width` defaults to the
    standard 30px stroke scaled to the image width. Optional `categories`
    gives per-scene tag lists for a per-category breakdown.
    """
    if len(pred_scenes) != len(gt_scenes):
        raise ValueError(f"scene count mismatch: {len(pred_scenes)} preds vs "
                         f"{len(gt_scenes)} gts")
    if categories is not None and len(categories) != len(gt_scenes):
        raise ValueError("categories must align with scenes")
    width = width if width is not None else max(1.0, RASTER_WIDTH_REF * w)

    counts = {}

    def bump(tag, tp, fp, fn):
        c = counts.setdefault(tag, [0, 0, 0])
        c[0] += tp
        c[1] += fp
        c[2] += fn

    for k, (preds, gts) in enumerate(zip(pred_scenes, gt_scenes)):
        pm = [rasterize_lane(_as_lane(p, n_rows, h), width, h, w)
              for p in preds]
        gm = [rasterize_lane(_as_lane(g, n_rows, h), width, h, w)
              for g in gts]
        tp, _ = _match_by_mask_iou(pm, gm, iou_thr)
        fp, fn = len(pm) - tp, len(gm) - tp
        bump("overall", tp, fp, fn)
        if categories is not None:
            for tag in categories[k]:
                bump(tag, tp, fp, fn)

    overall = counts.pop("overall", [0, 0, 0])
    return EvalResult(tp=overall[0], fp=overall[1], fn=overall[2],
                      breakdown={tag: EvalResult(tp=c[0], fp=c[1], fn=c[2])
                                 for tag, c in sorted(counts.items())})


def rows_from_lane(obj, h_samples, h: float, n_rows: int = 72) -> np.ndarray:
    """Sample a lane onto the h_samples grid; absent rows become -2."""
    lane = _as_lane(obj, n_rows, h)
    hs = np.asarray(h_samples, float)
    out = np.full(len(hs), ABSENT)
    inside = (hs >= lane.y_min) & (hs <= lane.y_max)
    ys = lane.rows()
    out[inside] = np.interp(hs[inside], ys, lane.xs)
    return out


def tusimple_accuracy(pred_scenes: list, gt_scenes: list, h_samples,
                      px_thr: float = 20.0,
                      lane_thr: float = 0.85) -> EvalResult:
    """Pointwise row accuracy on a shared h_samples grid.

    Scene entries are lists of per-row x arrays aligned to `h_samples`,
    using -2 for rows a lane does not reach. Each ground-truth lane is
    scored against its best prediction by the fraction of rows landing
    within `px_thr`; accuracy is the point-weighted mean of those
    fractions. Lanes (either side) whose best fraction falls below
    `lane_thr` count as FN / FP.
    """
    h_samples = list(h_samples)
    if len(h_samples) == 0:
        raise ValueError("h_samples is empty; nothing to score")
    if len(pred_scenes) != len(gt_scenes):
        raise ValueError(f"scene count mismatch: {len(pred_scenes)} preds vs "
                         f"{len(gt_scenes)} gts")

    matched_pts = 0.0
    total_pts = 0
    tp = fp = fn = 0
    for preds, gts in zip(pred_scenes, gt_scenes):
        preds = [np.asarray(p, float) for p in preds]
        gts = [np.asarray(g, float) for g in gts]
        for arr in preds + gts:
            if arr.shape != (len(h_samples),):
                raise ValueError(
                    f"lane has {arr.shape[0]} rows, grid has {len(h_samples)}")
        ratio = np.zeros((len(preds), len(gts)))
        hits = np.zeros_like(ratio)
        for m, g in enumerate(gts):
            present = g != ABSENT
            n_g = int(present.sum())
            if n_g == 0:
                continue
            for i, p in enumerate(preds):
                ok = present & (p != ABSENT) & (np.abs(p - g) < px_thr)
                hits[i, m] = ok.sum()
                ratio[i, m] = hits[i, m] / n_g
        for m, g in enumerate(gts):
            n_g = int((g != ABSENT).sum())
            if n_g == 0:
                continue
            best = ratio[:, m].max() if len(preds) else 0.0
            matched_pts += hits[:, m].max() if len(preds) else 0.0
            total_pts += n_g
            if best >= lane_thr:
                tp += 1
            else:
                fn += 1
        for i in range(len(preds)):
            best = ratio[i].max() if len(gts) else 0.0
            if best < lane_thr:
                fp += 1

    accuracy = matched_pts / total_pts if total_pts else 0.0
    return EvalResult(tp=tp, fp=fp, fn=fn, accuracy=accuracy)


def format_report(result: EvalResult, title: str = "evaluation") -> str:
    """Aligned text table over the overall result and any breakdown."""
    rows = [("overall", result)] + sorted(result.breakdown.items())
    head = f"{'category':<12}{'tp':>6}{'fp':>6}{'fn':>6}" \
           f"{'precision':>11}{'recall':>9}{'f1':>9}"
    if result.accuracy is not None:
        head += f"{'accuracy':>10}"
    lines = [title, "-" * len(head), head]
    for name, r in rows:
        line = f"{name:<12}{r.tp:>6}{r.fp:>6}{r.fn:>6}" \
               f"{r.precision:>11.4f}{r.recall:>9.4f}{r.f1:>9.4f}"
        if result.accuracy is not None:
            acc = r.accuracy if r.accuracy is not None else float("nan")
            line += f"{acc:>10.4f}"
        lines.append(line)
    return "\n".join(lines)


def write_report(path: str, result: EvalResult, title: str = "evaluation"):
    """Write the result as JSON; returns the serialized dict."""
    payload = {"title": title, **result.to_dict()}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload
