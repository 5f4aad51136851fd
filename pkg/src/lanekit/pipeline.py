"""End-to-end lane detection: sketch, sample, refine, train, infer.

The detector first sketches coarse full-height proposals by extending each
cell of a predicted direction map into a straight lane, then refines them:
multi-scale features are sampled along every proposal, projected into
grouped per-segment channels, mixed across proposals by segment attention,
and decoded into a score, per-row x offsets, and a vertical extent.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .assign import (LossWeights, attention_loss, build_cost, direction_loss,
                     focal_loss, hungarian_match, liou_loss, total_loss)
from .config import ModelConfig
from .geometry import Lane, Polyline, lane_from_polyline, line_iou
from .metrics import EvalResult, culane_f1
from .model import FeatureExtractor
from .numerics import (OptimState, Tensor, WarmupCosineSchedule, adamw_step,
                       gradients, load_checkpoint, save_checkpoint, tensor)
from .refine import Classifier, Regressor, SegmentAttention, attention_targets
from .sampler import (GroupedProjection, interp_matrix, make_scale_embedding,
                      sample_rows, scale_weights)
from .sketch import (DirectionMap, ProposalSet, construct_proposals,
                     encode_direction_gt, resize_direction_map)
from .synthdata import AnnotatedScene


class TrainingDiverged(RuntimeError):
    """Raised when a loss or gradient goes non-finite mid-training."""

    def __init__(self, message: str, checkpoint: str, step: int):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.step = step


def make_anchor_proposals(cfg: ModelConfig) -> ProposalSet:
    """Fixed straight anchors: grid_w bottom positions x grid_h angles."""
    xs_bottom = (np.arange(cfg.grid_w) + 0.5) * (cfg.w / cfg.grid_w)
    angles = 180.0 * (np.arange(cfg.grid_h) + 1.0) / (cfg.grid_h + 1.0)
    origins, thetas = [], []
    for a in angles:
        for x in xs_bottom:
            origins.append((x, float(cfg.h)))
            thetas.append(a)
    origins = np.asarray(origins, float)
    thetas = np.asarray(thetas, float)
    rad = np.radians(thetas)
    cot = np.cos(rad) / np.sin(rad)
    ys = np.arange(cfg.n_offsets) * (cfg.h / (cfg.n_offsets - 1))
    xs = (ys[None, :] - origins[:, 1:2]) * cot[:, None] + origins[:, 0:1]
    lanes = [Lane(xs=row, y_min=0.0, y_max=float(cfg.h), h=float(cfg.h))
             for row in xs]
    degenerate = ((xs < -0.5 * cfg.w) | (xs > 1.5 * cfg.w)).all(axis=1)
    return ProposalSet(lanes=lanes, origins=origins, angles=thetas,
                       degenerate=degenerate)


class LaneDetector:
    """All learnable blocks plus the sketch/refine forward pass."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.extractor = FeatureExtractor(rng, cfg.widths, cfg.d_model)
        self.z = make_scale_embedding(cfg.n_points, cfg.strides,
                                      init=cfg.z_init)
        self.projection = GroupedProjection(rng, cfg.n_points, cfg.d_model,
                                            cfg.channels, cfg.groups)
        self.lsam = SegmentAttention(rng, cfg.channels, cfg.groups) \
            if cfg.use_lsam else None
        self.classifier = Classifier(rng, cfg.channels)
        self.regressor = Regressor(rng, cfg.channels, cfg.n_offsets,
                                   float(cfg.h))
        self.anchors = make_anchor_proposals(cfg) \
            if cfg.init_mode == "anchor" else None
        # Probe rows are fixed; proposal xs get interpolated onto them.
        self._probe_ys = sample_rows(0.0, float(cfg.h), cfg.n_points)
        idx = np.linspace(0.0, cfg.n_offsets - 1.0, cfg.n_points)
        self._probe_lo = np.minimum(idx.astype(int), cfg.n_offsets - 2)
        self._probe_frac = idx - self._probe_lo

    def params(self) -> list:
        out = self.extractor.params()
        if self.cfg.sampling_mode == "adaptive":
            out.append(self.z)
        out.extend(self.projection.params())
        if self.lsam is not None:
            out.extend(self.lsam.params())
        out.extend(self.classifier.params())
        out.extend(self.regressor.params())
        return out

    def all_arrays(self) -> dict:
        """Every parameter (trainable or not) by name, for checkpoints."""
        arrays = {p.name: p.data for p in self.extractor.params()}
        arrays[self.z.name] = self.z.data
        blocks = [self.projection, self.classifier, self.regressor]
        if self.lsam is not None:
            blocks.append(self.lsam)
        for b in blocks:
            for p in b.params():
                arrays[p.name] = p.data
        return arrays

    def load_arrays(self, arrays: dict):
        own = self.all_arrays()
        missing = sorted(set(own) - set(arrays))
        if missing:
            raise ValueError(f"checkpoint missing parameters: {missing[:4]}"
                             f"{'...' if len(missing) > 4 else ''}")
        for p in self._all_params():
            if p.data.shape != arrays[p.name].shape:
                raise ValueError(
                    f"parameter {p.name}: checkpoint shape "
                    f"{arrays[p.name].shape} != model {p.data.shape}")
            p.data[...] = arrays[p.name]

    def _all_params(self) -> list:
        out = self.extractor.params() + [self.z] + self.projection.params()
        if self.lsam is not None:
            out.extend(self.lsam.params())
        out.extend(self.classifier.params())
        out.extend(self.regressor.params())
        return out

    # ------------------------------------------------------------------
    # forward
    # ------------------------------------------------------------------

    def proposals_from_map(self, angles: np.ndarray) -> ProposalSet:
        """Sketch proposals from a (hd, wd) angle map in degrees."""
        if self.anchors is not None:
            return self.anchors
        dmap = DirectionMap(angles=angles, h=float(self.cfg.h),
                            w=float(self.cfg.w))
        resized = resize_direction_map(dmap, self.cfg.grid_h, self.cfg.grid_w)
        return construct_proposals(resized, self.cfg.n_offsets)

    def _probe_xs(self, proposals: ProposalSet) -> np.ndarray:
        xs = proposals.xs_matrix()                      # (L, N)
        lo, frac = self._probe_lo, self._probe_frac
        return xs[:, lo] * (1.0 - frac) + xs[:, lo + 1] * frac

    def _sample_batch(self, pyr_t: list, probe_xs: list) -> Tensor:
        """Blend pyramid features at every image's probe points.

        Probe coordinates come from detached sketch geometry, so each
        level reduces to one constant interpolation matrix per image and a
        single batched matmul: (B, L*P, hw) @ (B, hw, d). Gradients flow
        into the features and (in adaptive mode) the scale embedding z.
        """
        cfg = self.cfg
        batch = len(probe_xs)
        n_pts = cfg.n_proposals * cfg.n_points
        ys = np.broadcast_to(self._probe_ys,
                             (cfg.n_proposals, cfg.n_points))
        adaptive = cfg.sampling_mode == "adaptive"
        levels = range(len(cfg.strides)) if adaptive \
            else [len(cfg.strides) // 2]
        weights = scale_weights(self.z, cfg.strides) if adaptive else None
        out = None
        for k in levels:
            stride = cfg.strides[k]
            _, d, hg, wg = pyr_t[k].shape
            mats = np.stack([interp_matrix(probe_xs[b], ys, stride, hg, wg)
                             for b in range(batch)])
            flat = pyr_t[k].reshape(batch, d, hg * wg).swapaxes(1, 2)
            sampled = (tensor(mats) @ flat).reshape(
                batch, cfg.n_proposals, cfg.n_points, d)
            if adaptive:
                term = sampled * weights[:, k].reshape(1, 1, cfg.n_points, 1)
                out = term if out is None else out + term
            else:
                out = sampled
        assert out is not None and out.shape[1] * out.shape[2] == n_pts
        return out

    def forward(self, images: np.ndarray) -> "ForwardResult":
        """uint8 (B, H, W, 3) batch -> per-image proposals and refinements."""
        cfg = self.cfg
        if images.ndim != 4 or images.shape[1:] != (cfg.h, cfg.w, 3):
            raise ValueError(f"expected (B, {cfg.h}, {cfg.w}, 3) images, got "
                             f"{images.shape}")
        pyr_t, dirs_t = self.extractor(images)
        batch = images.shape[0]
        proposals, probe_xs = [], []
        for b in range(batch):
            angles = np.clip(dirs_t[-1].data[b], 1e-4, 1.0 - 1e-4) * 180.0
            props = self.proposals_from_map(angles)
            proposals.append(props)
            probe_xs.append(self._probe_xs(props))
        raw = self._sample_batch(pyr_t, probe_xs)      # (B, L, P, d)
        x = self.projection(raw)                       # (B, L, c)
        attn_logits = None
        if self.lsam is not None:
            x, _, attn_logits = self.lsam(x)
        scores = self.classifier(x)                    # (B, L)
        sketch = np.stack([p.xs_matrix() for p in proposals])
        xs, y_min, y_max = self.regressor(x, sketch)
        return ForwardResult(proposals=proposals, directions=dirs_t,
                             scores=scores, xs=xs, y_min=y_min, y_max=y_max,
                             attn_logits=attn_logits)


@dataclass
class ForwardResult:
    proposals: list            # [ProposalSet] per image
    directions: list           # [(B, hd, wd) Tensor] per level
    scores: Tensor             # (B, L)
    xs: Tensor                 # (B, L, N)
    y_min: Tensor              # (B, L)
    y_max: Tensor              # (B, L)
    attn_logits: Tensor | None  # (B, L, L, G) when attention is enabled


# ----------------------------------------------------------------------
# training data preparation
# ----------------------------------------------------------------------

@dataclass
class TrainScene:
    """One scene with precomputed targets (optionally pre-flipped)."""

    image: np.ndarray
    gt_lanes: list             # [Lane] on the n_offsets grid
    polylines: list            # original [Polyline]
    dir_maps: list             # [DirectionMap] per pyramid level
    tags: list = field(default_factory=list)


def flip_polyline(poly: Polyline, w: float) -> Polyline:
    pts = poly.points.copy()
    pts[:, 0] = w - pts[:, 0]
    return Polyline(pts)


def flip_lane(lane: Lane, w: float) -> Lane:
    return Lane(xs=w - lane.xs, y_min=lane.y_min, y_max=lane.y_max,
                h=lane.h, score=lane.score)


def _targets_for(polys: list, cfg: ModelConfig) -> tuple:
    gt_lanes = [lane_from_polyline(p, cfg.n_offsets, float(cfg.h))
                for p in polys]
    maps = [encode_direction_gt(polys, cfg.h // s, cfg.w // s,
                                float(cfg.h), float(cfg.w),
                                k=cfg.gt_segments, tau=cfg.tau)
            for s in cfg.strides]
    return gt_lanes, maps


def prepare_scene(scene: AnnotatedScene, cfg: ModelConfig,
                  flipped: bool = False) -> TrainScene:
    polys = scene.lanes
    image = scene.image
    if flipped:
        polys = [flip_polyline(p, float(cfg.w)) for p in polys]
        image = np.ascontiguousarray(image[:, ::-1])
    gt_lanes, maps = _targets_for(polys, cfg)
    return TrainScene(image=image, gt_lanes=gt_lanes, polylines=polys,
                      dir_maps=maps, tags=list(scene.tags))


def prepare_dataset(scenes: list, cfg: ModelConfig) -> list:
    """Precompute targets; each entry is (plain, flipped-or-None)."""
    out = []
    for s in scenes:
        flipped = prepare_scene(s, cfg, flipped=True) \
            if cfg.flip_augment else None
        out.append((prepare_scene(s, cfg), flipped))
    return out


# ----------------------------------------------------------------------
# losses
# ----------------------------------------------------------------------

def _mean(parts: list) -> Tensor:
    acc = parts[0]
    for p in parts[1:]:
        acc = acc + p
    return acc * (1.0 / len(parts))


def compute_losses(detector: LaneDetector, out: ForwardResult,
                   batch: list) -> tuple:
    """Match refined lanes to ground truth and combine the four losses."""
    cfg = detector.cfg
    weights = LossWeights(w_cls=cfg.w_cls, w_reg=cfg.w_reg, w_dir=cfg.w_dir,
                          w_attn=cfg.w_attn)
    # Exploded weights surface here first: a NaN cost matrix would crash
    # the matcher with an unrelated error, so fail as a divergence instead.
    for name, t in (("xs", out.xs), ("scores", out.scores),
                    ("y_min", out.y_min), ("y_max", out.y_max)):
        if not np.isfinite(t.data).all():
            raise FloatingPointError(
                f"non-finite forward output '{name}'")
    cls_terms, reg_terms, dir_terms, attn_terms = [], [], [], []
    for b, scene in enumerate(batch):
        refined = [Lane(xs=row, y_min=0.0, y_max=float(cfg.h), h=float(cfg.h))
                   for row in out.xs.data[b]]
        labels = np.zeros(cfg.n_proposals)
        pairs = []
        if scene.gt_lanes:
            cost = build_cost(refined, scene.gt_lanes, cfg.radius)
            match = hungarian_match(cost)
            pairs, labels = match.pairs, match.labels
        cls_terms.append(focal_loss(out.scores[b], labels))

        if pairs:
            pair_losses = []
            for i, m in pairs:
                gt = scene.gt_lanes[m]
                li = liou_loss(out.xs[b, i], gt, cfg.radius)
                ends = (out.y_min[b, i] - gt.y_min).abs() + \
                       (out.y_max[b, i] - gt.y_max).abs()
                pair_losses.append(li + ends * (1.0 / cfg.h))
            reg_terms.append(_mean(pair_losses))
        else:
            reg_terms.append(tensor(0.0))

        if out.attn_logits is not None and cfg.w_attn > 0 and pairs:
            target = attention_targets(pairs, out.proposals[b].lanes,
                                       scene.gt_lanes, cfg.groups)
            attn_terms.append(attention_loss(out.attn_logits[b], target))
        else:
            attn_terms.append(tensor(0.0))

        level_losses = [direction_loss(out.directions[k][b],
                                       scene.dir_maps[k])
                        for k in range(len(scene.dir_maps))]
        dir_terms.append(_mean(level_losses))

    return total_loss(_mean(cls_terms), _mean(reg_terms), _mean(dir_terms),
                      _mean(attn_terms), weights)


# ----------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------

@dataclass
class TrainResult:
    detector: LaneDetector
    steps: int
    checkpoint: str
    log_path: str
    log: list


def _save_state(detector: LaneDetector, state: OptimState, path: str):
    arrays = dict(detector.all_arrays())
    for name, (m, v) in state.moments.items():
        arrays[f"optim.m.{name}"] = m
        arrays[f"optim.v.{name}"] = v
    meta = {"step": state.step, "config": detector.cfg.to_dict()}
    save_checkpoint(path, arrays, meta)


def load_detector(path: str) -> tuple:
    """Rebuild a detector (and raw arrays + meta) from a checkpoint."""
    arrays, meta = load_checkpoint(path)
    cfg_dict = meta.get("config")
    if cfg_dict is None:
        raise ValueError(f"checkpoint at {path} carries no config")
    cfg_dict = dict(cfg_dict)
    cfg_dict["widths"] = tuple(cfg_dict.get("widths", (16, 32, 64)))
    cfg = ModelConfig(**cfg_dict)
    detector = LaneDetector(cfg)
    detector.load_arrays({k: v for k, v in arrays.items()
                          if not k.startswith("optim.")})
    return detector, arrays, meta


# Fields that fix tensor shapes or probe geometry; a resumed run may not
# change these because the loaded weights and precomputes depend on them.
_ARCH_FIELDS = ("h", "w", "grid_h", "grid_w", "n_offsets", "n_points",
                "groups", "widths", "d_model", "channels", "sampling_mode",
                "use_lsam", "init_mode")


def train(cfg: ModelConfig, scenes: list, out_dir: str,
          resume_from: str | None = None, log_every: int = 25,
          callbacks: tuple = ()) -> TrainResult:
    """Optimize a detector on prepared or raw scenes; returns the result.

    Checkpoints land in out_dir/checkpoint every cfg.checkpoint_every steps
    (and at the end); a JSON-lines log records every log_every-th loss. A
    non-finite loss or gradient aborts with TrainingDiverged, leaving the
    last good checkpoint in place. Resuming continues the step counter and
    the data order.
    """
    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint")
    log_path = os.path.join(out_dir, "train_log.jsonl")

    if resume_from is not None:
        # Weights and optimizer state come from the checkpoint; the caller's
        # cfg governs the continued run (schedule length, lr, batch, ...).
        detector, arrays, meta = load_detector(resume_from)
        mismatched = [f for f in _ARCH_FIELDS
                      if getattr(cfg, f) != getattr(detector.cfg, f)]
        if mismatched:
            raise ValueError(
                f"cannot resume: config differs from checkpoint on "
                f"architecture fields {mismatched}")
        detector.cfg = cfg
        state = OptimState(
            schedule=WarmupCosineSchedule(base_lr=cfg.lr,
                                          warmup_iters=cfg.warmup_iters,
                                          total_iters=cfg.total_iters),
            weight_decay=cfg.weight_decay, step=int(meta["step"]))
        for p in detector.params():
            m_key, v_key = f"optim.m.{p.name}", f"optim.v.{p.name}"
            if m_key in arrays:
                state.moments[p.name] = (arrays[m_key].astype(np.float32),
                                         arrays[v_key].astype(np.float32))
        start = state.step
    else:
        detector = LaneDetector(cfg)
        state = OptimState(
            schedule=WarmupCosineSchedule(base_lr=cfg.lr,
                                          warmup_iters=cfg.warmup_iters,
                                          total_iters=cfg.total_iters),
            weight_decay=cfg.weight_decay)
        start = 0

    prepared = prepare_dataset(scenes, cfg) \
        if scenes and isinstance(scenes[0], AnnotatedScene) else list(scenes)
    if not prepared:
        raise ValueError("no training scenes")

    params = detector.params()
    _save_state(detector, state, ckpt_path)
    log_entries = []
    mode = "a" if resume_from is not None else "w"
    with open(log_path, mode) as log_fh:
        for step in range(start + 1, cfg.total_iters + 1):
            rng = np.random.default_rng((cfg.seed, step))
            picks = rng.integers(0, len(prepared), cfg.batch_size)
            batch = []
            for idx in picks:
                plain, flipped = prepared[idx]
                use_flip = flipped is not None and rng.random() < 0.5
                batch.append(flipped if use_flip else plain)
            images = np.stack([s.image for s in batch])
            try:
                out = detector.forward(images)
                loss, report = compute_losses(detector, out, batch)
                grads = gradients(loss, params)
                lr = adamw_step(params, grads, state)
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"aborted at step {step}: {exc}; last good checkpoint "
                    f"from step {_last_saved(ckpt_path)} kept",
                    checkpoint=ckpt_path, step=step) from exc
            if step % log_every == 0 or step == cfg.total_iters:
                entry = {"step": step, "lr": lr, "total": report.total,
                         "cls": report.l_cls, "reg": report.l_reg,
                         "dir": report.l_dir, "attn": report.l_attn}
                log_entries.append(entry)
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            if step % cfg.checkpoint_every == 0:
                _save_state(detector, state, ckpt_path)
            for cb in callbacks:
                cb(step, detector, report)
    _save_state(detector, state, ckpt_path)
    return TrainResult(detector=detector, steps=state.step,
                       checkpoint=ckpt_path, log_path=log_path,
                       log=log_entries)


def _last_saved(ckpt_path: str) -> int:
    try:
        _, meta = load_checkpoint(ckpt_path)
        return int(meta.get("step", -1))
    except Exception:
        return -1


# ----------------------------------------------------------------------
# inference and evaluation
# ----------------------------------------------------------------------

def nms(lanes: list, thr: float, radius: float, max_lanes: int) -> list:
    """Greedy score-ordered suppression of lanes overlapping a keeper."""
    order = sorted(range(len(lanes)), key=lambda i: -lanes[i].score)
    kept = []
    for i in order:
        if len(kept) >= max_lanes:
            break
        if all(line_iou(lanes[i], k, radius) < thr for k in kept):
            kept.append(lanes[i])
    return kept


def infer(detector: LaneDetector, image: np.ndarray) -> list:
    """Detect lanes on one uint8 (H, W, 3) image; returns scored Lanes."""
    cfg = detector.cfg
    out = detector.forward(image[None])
    scores = np.asarray(out.scores.data[0], float)
    xs = np.asarray(out.xs.data[0], float)
    y_min = np.asarray(out.y_min.data[0], float)
    y_max = np.asarray(out.y_max.data[0], float)
    min_span = 2.0 * cfg.h / (cfg.n_offsets - 1)
    cands = []
    for i in range(cfg.n_proposals):
        if scores[i] < cfg.score_thr:
            continue
        if y_max[i] - y_min[i] < min_span:
            continue
        cands.append(Lane(xs=xs[i], y_min=float(y_min[i]),
                          y_max=float(y_max[i]), h=float(cfg.h),
                          score=float(scores[i])))
    cands = [c for c in cands if c.valid().sum() >= 2]
    return nms(cands, cfg.nms_thr, cfg.radius, cfg.max_lanes)


def evaluate(detector: LaneDetector, scenes: list,
             categories: bool = False) -> EvalResult:
    """Stroke-mask F1 of the detector over annotated scenes."""
    cfg = detector.cfg
    preds, gts, cats = [], [], []
    for scene in scenes:
        preds.append(infer(detector, scene.image))
        gts.append(scene.lanes)
        cats.append(scene.tags)
    return culane_f1(preds, gts, h=cfg.h, w=cfg.w,
                     categories=cats if categories else None,
                     n_rows=cfg.n_offsets)


def oracle_proposals(scene: AnnotatedScene, cfg: ModelConfig) -> ProposalSet:
    """Sketch proposals straight from ground-truth directions."""
    dmap = encode_direction_gt(scene.lanes, cfg.grid_h, cfg.grid_w,
                               float(cfg.h), float(cfg.w),
                               k=cfg.gt_segments, tau=cfg.tau)
    return construct_proposals(dmap, cfg.n_offsets)


def best_proposal_iou(proposals: ProposalSet, scene: AnnotatedScene,
                      cfg: ModelConfig) -> list:
    """Best clamped LineIoU over all proposals, per ground-truth lane."""
    out = []
    for poly in scene.lanes:
        gt = lane_from_polyline(poly, cfg.n_offsets, float(cfg.h))
        best = max(line_iou(lane, gt, cfg.radius)
                   for lane in proposals.lanes)
        out.append(best)
    return out


# ----------------------------------------------------------------------
# reporting utilities
# ----------------------------------------------------------------------

def render_overlay(image: np.ndarray, lanes: list,
                   color=(255, 64, 64), width: float = 2.0) -> np.ndarray:
    """Tint lane strokes onto a copy of the image; no lanes, no change."""
    from .geometry import rasterize_lane
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    out = image.copy()
    h, w = image.shape[:2]
    color = np.asarray(color, np.uint16)
    for lane in lanes:
        mask = rasterize_lane(lane, width, h, w)
        out[mask] = ((out[mask].astype(np.uint16) + 2 * color) // 3
                     ).astype(np.uint8)
    return out


def count_parameters(detector: LaneDetector) -> dict:
    """Per-module parameter counts plus refinement-head MAC estimates."""
    def count(ps):
        return int(sum(p.data.size for p in ps))

    cfg = detector.cfg
    counts = {
        "backbone": count(detector.extractor.backbone.params()),
        "laterals+direction": count(
            [p for m in detector.extractor.laterals +
             detector.extractor.dir_heads for p in m.params()]),
        "scale_embedding": int(detector.z.data.size),
        "projection": count(detector.projection.params()),
        "attention": count(detector.lsam.params())
        if detector.lsam is not None else 0,
        "classifier": count(detector.classifier.params()),
        "regressor": count(detector.regressor.params()),
    }
    counts["total"] = sum(counts.values())
    counts["head_macs"] = head_macs(cfg, cfg.n_proposals)
    return counts


def head_macs(cfg: ModelConfig, n_proposals: int) -> int:
    """Multiply-accumulates of the per-proposal heads for L proposals.

    Projection, classifier, and regressor all act pointwise per proposal,
    so the count is exactly linear in L (attention excluded).
    """
    per = 0
    bounds = [(g * cfg.n_points) // cfg.groups for g in range(cfg.groups + 1)]
    for g in range(cfg.groups):
        per += (bounds[g + 1] - bounds[g]) * cfg.d_model * \
            (cfg.channels // cfg.groups)
    per += cfg.channels * cfg.channels + cfg.channels          # classifier
    per += cfg.channels * cfg.channels + \
        cfg.channels * (cfg.n_offsets + 2)                     # regressor
    return per * n_proposals
