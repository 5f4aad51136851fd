"""Procedural desk-scale road scenes with exact lane annotations.

Scenes are built from a handful of quadratic lanes x(y) that fan out from a
vanishing region toward the bottom edge, rendered anti-aliased over a noisy
textured background. Annotations store the generating curves sampled on a
fixed row grid (h_samples), with -2 marking rows a lane does not reach, so
external predictions in the same format can be scored directly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .geometry import Polyline

ABSENT = -2.0


@dataclass
class SceneSpec:
    """Parameter ranges for procedural scene generation."""

    h: int = 64
    w: int = 160
    lane_count: tuple = (2, 4)
    curvature_max: float = 8e-3       # quadratic coefficient bound (px/px^2)
    lane_width: tuple = (1.6, 3.0)
    min_bottom_gap: float = 12.0      # pairwise separation at the bottom row
    min_top_gap: float = 3.0          # pairwise separation everywhere else
    max_slant: float = 0.7            # |dx/dy| bound; keeps lanes ego-framed
    horizon: tuple = (0.15, 0.35)     # lane start as a fraction of height
    brightness: tuple = (0.45, 1.0)   # global illumination multiplier
    noise: tuple = (2.0, 9.0)         # additive pixel noise sigma
    dim_threshold: float = 0.62       # below this brightness tag "dim"

    def __post_init__(self):
        if self.h < 8 or self.w < 8:
            raise ValueError(f"image dims too small: {self.h}x{self.w}")
        if self.lane_count[0] < 1:
            raise ValueError("need at least one lane")
        if self.curvature_max < 0:
            raise ValueError("curvature_max must be nonnegative")
        if self.max_slant <= 0:
            raise ValueError("max_slant must be positive")
        if self.min_top_gap < 0 or self.min_bottom_gap < self.min_top_gap:
            raise ValueError(
                f"need 0 <= min_top_gap <= min_bottom_gap, got "
                f"{self.min_top_gap} and {self.min_bottom_gap}")


@dataclass
class AnnotatedScene:
    """Rendered image plus exact ground-truth lane polylines."""

    image: np.ndarray            # (h, w, 3) uint8
    lanes: list                  # [Polyline, ...]
    seed: int
    tags: list = field(default_factory=list)


def _lane_gap_ok(xb, slope, curv, y0, spec: SceneSpec) -> bool:
    """Adjacent lanes keep a positive gap from horizon to bottom."""
    ys = np.linspace(y0, float(spec.h), 33)
    dy = ys[None, :] - spec.h
    xs = xb[:, None] + slope[:, None] * dy + curv[:, None] * dy * dy
    return np.diff(xs, axis=0).min() >= spec.min_top_gap


def _sample_lane_curves(rng, spec: SceneSpec):
    """Bottom-anchored quadratics x(y) = x_b + s*(y-h) + c*(y-h)^2."""
    h, w = spec.h, spec.w
    n = int(rng.integers(spec.lane_count[0], spec.lane_count[1] + 1))
    for _ in range(200):
        xb = np.sort(rng.uniform(0.02 * w, 0.98 * w, n))
        if n > 1 and np.diff(xb).min() < spec.min_bottom_gap:
            continue
        # Slopes steer each lane loosely toward a common vanishing area
        # and curvature is shared road geometry with small per-lane
        # variation: a forward camera frames one road, so lane boundaries
        # converge and bend together and never cross inside the image.
        # The slant cap keeps every lane ego-framed.
        vp = rng.uniform(0.3 * w, 0.7 * w)
        y0 = rng.uniform(*spec.horizon) * h
        slope = (xb - vp) / (h - y0) * rng.uniform(0.55, 0.95, n)
        slope = np.clip(slope, -spec.max_slant, spec.max_slant)
        road = rng.uniform(-spec.curvature_max, spec.curvature_max)
        curv = np.clip(road * rng.uniform(0.7, 1.3, n),
                       -spec.curvature_max, spec.curvature_max)
        if n > 1 and not _lane_gap_ok(xb, slope, curv, y0, spec):
            continue
        return xb, slope, curv, y0
    raise RuntimeError(
        "could not satisfy lane separation constraints in 200 attempts")


def _lane_xs(xb, slope, curv, ys, h):
    dy = ys - h
    return xb + slope * dy + curv * dy * dy


def generate_scene(seed: int, spec: SceneSpec | None = None) -> AnnotatedScene:
    """Render one deterministic scene from its seed."""
    spec = spec or SceneSpec()
    rng = np.random.default_rng(seed)
    h, w = spec.h, spec.w
    xb, slope, curv, y0 = _sample_lane_curves(rng, spec)
    brightness = rng.uniform(*spec.brightness)
    noise = rng.uniform(*spec.noise)
    width = rng.uniform(*spec.lane_width)

    # Textured background: vertical shading ramp plus low-frequency banding.
    ys_px = np.arange(h)[:, None]
    xs_px = np.arange(w)[None, :]
    base = 70.0 + 45.0 * ys_px / h + 12.0 * np.sin(xs_px / w * 4.7 + seed % 7)
    img = np.broadcast_to(base, (h, w)).astype(np.float64).copy()
    img += rng.normal(0.0, noise, (h, w))

    # Anti-aliased lane strokes: per-row coverage of each pixel column.
    rows = np.arange(h) + 0.5
    lane_rows = rows[rows >= y0]
    for i in range(len(xb)):
        centers = _lane_xs(xb[i], slope[i], curv[i], lane_rows, h)
        cover = np.clip(width / 2 + 0.5 - np.abs(
            xs_px - centers[:, None]), 0.0, 1.0)
        region = img[rows >= y0]
        img[rows >= y0] = region + cover * (215.0 - region) * 0.95

    img = np.clip(img * brightness, 0, 255).astype(np.uint8)
    image = np.repeat(img[:, :, None], 3, axis=2)

    lanes = []
    for i in range(len(xb)):
        ys = np.arange(int(np.ceil(y0)), h, dtype=float)
        if len(ys) < 2:
            ys = np.array([y0, float(h - 1)])
        xs = _lane_xs(xb[i], slope[i], curv[i], ys, h)
        lanes.append(Polyline(np.stack([xs, ys], axis=1)))

    tags = ["straight" if abs(curv[i]) < 0.15 * spec.curvature_max else "curve"
            for i in range(len(xb))]
    scene_tags = sorted(set(tags))
    if brightness < spec.dim_threshold:
        scene_tags.append("dim")
    return AnnotatedScene(image=image, lanes=lanes, seed=seed,
                          tags=scene_tags)


def generate_dataset(seeds, spec: SceneSpec | None = None) -> list:
    """Generate one scene per seed; disjoint seed ranges give disjoint splits."""
    spec = spec or SceneSpec()
    return [generate_scene(int(s), spec) for s in seeds]


def default_h_samples(h: int, step: int = 2) -> list:
    """The fixed annotation row grid for an h-pixel-tall image."""
    return list(range(0, h, step))


def scene_to_record(scene: AnnotatedScene, raw_file: str,
                    h_samples: list) -> dict:
    """Serialize one scene's annotations onto the shared row grid."""
    lanes = []
    for poly in scene.lanes:
        ys, xs = poly.points[:, 1], poly.points[:, 0]
        row = np.full(len(h_samples), ABSENT)
        hs = np.asarray(h_samples, float)
        inside = (hs >= ys.min()) & (hs <= ys.max())
        row[inside] = np.interp(hs[inside], ys, xs)
        lanes.append([float(v) for v in row])
    return {"raw_file": raw_file, "lanes": lanes,
            "h_samples": list(h_samples), "seed": scene.seed,
            "tags": scene.tags}


def record_to_lanes(record: dict) -> list:
    """Rebuild polylines from a JSON record; drops rows marked absent."""
    hs = np.asarray(record["h_samples"], float)
    lanes = []
    for xs in record["lanes"]:
        xs = np.asarray(xs, float)
        present = xs != ABSENT
        if present.sum() >= 2:
            lanes.append(Polyline(np.stack([xs[present], hs[present]], 1)))
    return lanes


def write_dataset(scenes: list, out_dir: str, step: int = 2) -> str:
    """Write images (PNG) plus a JSON-lines annotation index; returns it."""
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    index = os.path.join(out_dir, "annotations.jsonl")
    with open(index, "w") as fh:
        for k, scene in enumerate(scenes):
            rel = os.path.join("images", f"scene_{k:05d}.png")
            Image.fromarray(scene.image).save(os.path.join(out_dir, rel))
            h_samples = default_h_samples(scene.image.shape[0], step)
            fh.write(json.dumps(scene_to_record(scene, rel, h_samples)) + "\n")
    return index


def read_dataset(data_dir: str, with_images: bool = True) -> list:
    """Read scenes back; raises on malformed records, naming the line."""
    index = os.path.join(data_dir, "annotations.jsonl")
    scenes = []
    with open(index) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                hs = record["h_samples"]
                for xs in record["lanes"]:
                    if len(xs) != len(hs):
                        raise ValueError(
                            f"lane has {len(xs)} points for {len(hs)} rows")
                lanes = record_to_lanes(record)
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(
                    f"{index}:{lineno}: malformed record: {exc}") from exc
            image = None
            if with_images:
                path = os.path.join(data_dir, record["raw_file"])
                image = np.asarray(Image.open(path))
            scenes.append(AnnotatedScene(
                image=image, lanes=lanes, seed=record.get("seed", -1),
                tags=record.get("tags", [])))
    return scenes
