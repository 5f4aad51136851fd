"""Lane geometry primitives shared across the pipeline.

A lane is a fixed vertical grid of x-coordinates: row i sits at
y_i = i * h / (n - 1), and only rows whose y lies inside [y_min, y_max]
are valid. Distances, IoU, and rasterization all restrict themselves to
valid rows; nothing extrapolates beyond a lane's endpoints.

Binary masks are plain H x W boolean arrays; pixel (r, c) is treated as
the point (c + 0.5, r + 0.5) in image coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SEGMENT_DISTANCE_SENTINEL = 1e6

BinaryMask = np.ndarray  # H x W bool


@dataclass
class Lane:
    """A lane as x-coordinates on the fixed row grid of an h-pixel image."""

    xs: np.ndarray
    y_min: float
    y_max: float
    h: float
    score: float = 1.0

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=np.float64)
        if self.xs.ndim != 1 or self.xs.size < 2:
            raise ValueError(f"lane needs >= 2 rows, got shape {self.xs.shape}")
        if not (0.0 <= self.y_min <= self.y_max <= self.h):
            raise ValueError(
                f"lane extent [{self.y_min}, {self.y_max}] outside [0, {self.h}]")

    @property
    def n(self) -> int:
        return self.xs.size

    def rows(self) -> np.ndarray:
        """y-coordinate of every row index."""
        return np.arange(self.n) * (self.h / (self.n - 1))

    def valid(self) -> np.ndarray:
        """Boolean mask of rows inside the lane's vertical extent."""
        ys = self.rows()
        return (ys >= self.y_min) & (ys <= self.y_max)

    def points(self) -> np.ndarray:
        """(M, 2) array of (x, y) for the valid rows, top to bottom."""
        keep = self.valid()
        return np.stack([self.xs[keep], self.rows()[keep]], axis=1)


@dataclass
class Polyline:
    """Ordered lane vertices, canonicalized to strictly increasing y."""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        order = np.argsort(pts[:, 1], kind="stable")
        pts = pts[order]
        # Collapse vertices that repeat a y value; keep the first.
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.diff(pts[:, 1]) > 0
        pts = pts[keep]
        if len(pts) < 2:
            raise ValueError(
                f"polyline needs >= 2 vertices with distinct y, got {len(pts)}")
        self.points = pts

    @property
    def y_min(self) -> float:
        return float(self.points[0, 1])

    @property
    def y_max(self) -> float:
        return float(self.points[-1, 1])

    def x_at(self, y: float):
        """Interpolated x at height y, or None outside the extent."""
        if y < self.y_min or y > self.y_max:
            return None
        return float(np.interp(y, self.points[:, 1], self.points[:, 0]))


def lane_from_polyline(p: Polyline, n: int, h: float) -> Lane:
    """Resample a polyline onto the n-row grid by linear interpolation."""
    ys = np.arange(n) * (h / (n - 1))
    xs = np.interp(ys, p.points[:, 1], p.points[:, 0])
    return Lane(xs=xs, y_min=max(0.0, p.y_min), y_max=min(float(h), p.y_max),
                h=float(h))


def line_iou(a: Lane, b: Lane, radius: float, signed: bool = False) -> float:
    """Row-interval IoU of two lanes widened by `radius` pixels.

    Each valid row contributes the overlap of [x - radius, x + radius]
    intervals. The metric variant clamps negative per-row intersections to
    zero; the signed variant keeps them negative so the value still varies
    as disjoint lanes approach each other. Rows valid in only one lane are
    ignored; no common row gives 0.
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if a.n != b.n or a.h != b.h:
        raise ValueError(
            f"lane grids differ: n={a.n} h={a.h} vs n={b.n} h={b.h}")
    common = a.valid() & b.valid()
    if not common.any():
        return 0.0
    xa, xb = a.xs[common], b.xs[common]
    inter = np.minimum(xa + radius, xb + radius) - np.maximum(
        xa - radius, xb - radius)
    union = np.maximum(xa + radius, xb + radius) - np.minimum(
        xa - radius, xb - radius)
    if not signed:
        inter = np.maximum(inter, 0.0)
    return float(inter.sum() / union.sum())


def segment_distance(a: Lane, b: Lane, g: int, n_groups: int) -> float:
    """Mean |xa - xb| over the commonly valid rows of vertical segment g.

    Segment g covers row indices [g*n/G, (g+1)*n/G). Returns a large
    sentinel when the lanes share no valid row there.
    """
    if not 0 <= g < n_groups:
        raise ValueError(f"segment index {g} outside [0, {n_groups})")
    lo = (g * a.n) // n_groups
    hi = ((g + 1) * a.n) // n_groups
    common = a.valid()[lo:hi] & b.valid()[lo:hi]
    if not common.any():
        return SEGMENT_DISTANCE_SENTINEL
    return float(np.abs(a.xs[lo:hi][common] - b.xs[lo:hi][common]).mean())


def _segment_hits(px, py, ax, ay, bx, by, radius_sq):
    """Which of the points (px, py) lie within sqrt(radius_sq) of segment AB."""
    dx, dy = bx - ax, by - ay
    seg_len_sq = dx * dx + dy * dy
    if seg_len_sq == 0.0:
        ex, ey = px - ax, py - ay
        return ex * ex + ey * ey <= radius_sq
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / seg_len_sq, 0.0, 1.0)
    ex = px - ax - t * dx
    ey = py - ay - t * dy
    return ex * ex + ey * ey <= radius_sq


def rasterize_lane(lane: Lane, width: float, h: int, w: int) -> BinaryMask:
    """Paint all pixels within width/2 (Euclidean) of the lane polyline.

    The polyline passes through the lane's valid rows; pixels are tested at
    their centers and the mask is clipped to the h x w image.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    mask = np.zeros((h, w), dtype=bool)
    pts = lane.points()
    if len(pts) == 0:
        return mask
    radius = width / 2.0
    radius_sq = radius * radius
    segments = [(pts[i], pts[i + 1]) for i in range(len(pts) - 1)] or \
        [(pts[0], pts[0])]
    for a, b in segments:
        x_lo = int(np.floor(min(a[0], b[0]) - radius - 0.5))
        x_hi = int(np.ceil(max(a[0], b[0]) + radius - 0.5))
        y_lo = int(np.floor(min(a[1], b[1]) - radius - 0.5))
        y_hi = int(np.ceil(max(a[1], b[1]) + radius - 0.5))
        x_lo, x_hi = max(0, x_lo), min(w - 1, x_hi)
        y_lo, y_hi = max(0, y_lo), min(h - 1, y_hi)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        cols, rows = np.meshgrid(np.arange(x_lo, x_hi + 1),
                                 np.arange(y_lo, y_hi + 1))
        hit = _segment_hits(cols + 0.5, rows + 0.5, a[0], a[1], b[0], b[1],
                            radius_sq)
        mask[y_lo:y_hi + 1, x_lo:x_hi + 1] |= hit
    return mask


def mask_iou(m1: BinaryMask, m2: BinaryMask) -> float:
    """Intersection-over-union of two equally sized boolean masks."""
    if m1.shape != m2.shape:
        raise ValueError(f"mask shapes differ: {m1.shape} vs {m2.shape}")
    union = np.logical_or(m1, m2).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(m1, m2).sum() / union)
