"""Direction-map sketching: ground-truth direction encoding, orientation-aware
map resizing, and construction of full-height lane proposals from per-cell
local directions.

Conventions: image y grows downward; a cell angle is the local lane
orientation theta = atan2(dy, dx) mod 180 degrees, so vertical lanes are 90
and the value always lies in [0, 180). Cell (row, col) of an Hd x Wd map over
an H x W image has its center at ((col + 0.5) * W / Wd, (row + 0.5) * H / Hd).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Lane, Polyline

# Local directions closer than this to horizontal produce useless
# full-height lines (the cotangent blows up), so angles are clamped to
# [ANGLE_CLAMP_DEG, 180 - ANGLE_CLAMP_DEG] before constructing proposals.
ANGLE_CLAMP_DEG = 10.0

# Ground-truth directions supervise every cell within this many cell
# widths of a lane segment.
DEFAULT_NEIGHBOR_RADIUS = 1.5


@dataclass
class DirectionMap:
    """Per-cell local lane angles (degrees in [0, 180)) over an h x w image."""

    angles: np.ndarray                 # (Hd, Wd) degrees
    h: float
    w: float
    mask: np.ndarray | None = None     # (Hd, Wd) bool, cells with supervision

    def __post_init__(self):
        self.angles = np.asarray(self.angles, dtype=np.float64)
        if self.angles.ndim != 2 or self.angles.size == 0:
            raise ValueError(f"angle grid must be 2-D nonempty, "
                             f"got shape {self.angles.shape}")
        if (self.angles < 0).any() or (self.angles >= 180).any():
            raise ValueError("angles must lie in [0, 180) degrees")

    @property
    def grid_shape(self) -> tuple:
        return self.angles.shape

    def cell_centers(self) -> tuple:
        """(cx, cy) arrays of cell-center image coordinates, shape (Hd, Wd)."""
        hd, wd = self.angles.shape
        cx = (np.arange(wd) + 0.5) * (self.w / wd)
        cy = (np.arange(hd) + 0.5) * (self.h / hd)
        return np.broadcast_to(cx, (hd, wd)), np.broadcast_to(cy[:, None],
                                                              (hd, wd))


@dataclass
class ProposalSet:
    """Full-height lane proposals, one per direction-map cell, row-major."""

    lanes: list                 # L Lane objects
    origins: np.ndarray         # (L, 2) cell-center (x, y)
    angles: np.ndarray          # (L,) sketch angle, degrees
    degenerate: np.ndarray      # (L,) bool: entirely outside [-W/2, 3W/2]

    def __len__(self):
        return len(self.lanes)

    def xs_matrix(self) -> np.ndarray:
        """(L, N) matrix of proposal x-coordinates."""
        return np.stack([lane.xs for lane in self.lanes])


def _split_equal_arc(points: np.ndarray, k: int) -> np.ndarray:
    """Cut a polyline into k equal-arc-length chords.

    Returns (k + 1, 2) chord endpoints obtained by interpolating along the
    polyline at arc lengths i * S / k.
    """
    deltas = np.diff(points, axis=0)
    seg_len = np.hypot(deltas[:, 0], deltas[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    cuts = np.linspace(0.0, cum[-1], k + 1)
    return np.stack([np.interp(cuts, cum, points[:, 0]),
                     np.interp(cuts, cum, points[:, 1])], axis=1)


def encode_direction_gt(gts: list, hd: int, wd: int, h: float, w: float,
                        k: int = 8,
                        tau: float = DEFAULT_NEIGHBOR_RADIUS) -> DirectionMap:
    """Rasterize ground-truth lane directions onto an hd x wd cell grid.

    Every lane polyline is split into k equal-arc chords; each chord's angle
    is written to all cells whose center lies within tau cell units of the
    chord. Conflicts resolve to the nearest chord, then to the
    earlier-listed lane. Unassigned cells read 90 degrees with mask off.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    angles = np.full((hd, wd), 90.0)
    mask = np.zeros((hd, wd), dtype=bool)
    best = np.full((hd, wd), np.inf)
    # Work in cell units so "within tau cells" is isotropic on the grid.
    sx, sy = wd / w, hd / h
    cx = np.broadcast_to((np.arange(wd) + 0.5), (hd, wd))
    cy = np.broadcast_to((np.arange(hd) + 0.5)[:, None], (hd, wd))
    for poly in gts:
        chords = _split_equal_arc(poly.points, k)
        chords_cell = chords * np.array([sx, sy])
        for (ax, ay), (bx, by) in zip(chords_cell[:-1], chords_cell[1:]):
            dx, dy = bx - ax, by - ay
            len_sq = dx * dx + dy * dy
            if len_sq == 0.0:
                continue
            theta = math.degrees(math.atan2(by - ay, bx - ax)) % 180.0
            t = np.clip(((cx - ax) * dx + (cy - ay) * dy) / len_sq, 0.0, 1.0)
            dist = np.hypot(cx - ax - t * dx, cy - ay - t * dy)
            update = (dist <= tau) & (dist < best)
            best[update] = dist[update]
            angles[update] = theta
            mask |= update
    return DirectionMap(angles=angles, h=float(h), w=float(w), mask=mask)


def construct_proposals(dmap: DirectionMap, n: int) -> ProposalSet:
    """Extend every cell's local direction into a full-height lane.

    Row i of proposal (x, y, theta) gets x_i = (y_i - y) * cot(theta) + x
    with theta clamped away from horizontal. Proposals keep the full
    vertical extent; endpoints are only learned later. Proposals lying
    entirely outside [-W/2, 3W/2] are flagged degenerate but retained so
    indices keep matching map cells.
    """
    cx, cy = dmap.cell_centers()
    cx, cy = cx.reshape(-1), cy.reshape(-1)
    theta = np.clip(dmap.angles.reshape(-1), ANGLE_CLAMP_DEG,
                    180.0 - ANGLE_CLAMP_DEG)
    rad = np.radians(theta)
    cot = np.cos(rad) / np.sin(rad)
    ys = np.arange(n) * (dmap.h / (n - 1))
    xs = (ys[None, :] - cy[:, None]) * cot[:, None] + cx[:, None]
    lanes = [Lane(xs=row, y_min=0.0, y_max=dmap.h, h=dmap.h)
             for row in xs]
    degenerate = ((xs < -0.5 * dmap.w) | (xs > 1.5 * dmap.w)).all(axis=1)
    return ProposalSet(lanes=lanes, origins=np.stack([cx, cy], axis=1),
                       angles=theta, degenerate=degenerate)


def resize_direction_map(dmap: DirectionMap, hd2: int, wd2: int) -> DirectionMap:
    """Resize a direction map, interpolating orientations, not raw angles.

    Angles are pi-periodic, so each cell becomes the doubled-angle vector
    (cos 2t, sin 2t); the vectors are bilinearly resampled (edges clamped)
    and the angle is recovered via atan2 / 2. 179 and 1 average to 0, not
    90. Where opposing orientations cancel to a zero vector, the
    nearest source cell's angle is used instead.
    """
    if hd2 < 1 or wd2 < 1:
        raise ValueError(f"target dims must be >= 1, got {hd2}x{wd2}")
    hd, wd = dmap.grid_shape
    doubled = np.radians(dmap.angles * 2.0)
    vx, vy = np.cos(doubled), np.sin(doubled)

    sx = (np.arange(wd2) + 0.5) * (wd / wd2) - 0.5
    sy = (np.arange(hd2) + 0.5) * (hd / hd2) - 0.5
    x0 = np.clip(np.floor(sx).astype(int), 0, wd - 1)
    y0 = np.clip(np.floor(sy).astype(int), 0, hd - 1)
    x1 = np.minimum(x0 + 1, wd - 1)
    y1 = np.minimum(y0 + 1, hd - 1)
    fx = np.clip(sx - x0, 0.0, 1.0)[None, :]
    fy = np.clip(sy - y0, 0.0, 1.0)[:, None]

    def blend(field):
        top = field[y0[:, None], x0] * (1 - fx) + field[y0[:, None], x1] * fx
        bot = field[y1[:, None], x0] * (1 - fx) + field[y1[:, None], x1] * fx
        return top * (1 - fy) + bot * fy

    rx, ry = blend(vx), blend(vy)
    angles = (np.degrees(np.arctan2(ry, rx)) / 2.0) % 180.0

    tiny = np.hypot(rx, ry) < 1e-12
    if tiny.any():
        nearest_c = np.clip(np.rint(sx).astype(int), 0, wd - 1)
        nearest_r = np.clip(np.rint(sy).astype(int), 0, hd - 1)
        fallback = dmap.angles[nearest_r[:, None], nearest_c[None, :]]
        angles = np.where(tiny, fallback, angles)
    return DirectionMap(angles=angles, h=dmap.h, w=dmap.w)
