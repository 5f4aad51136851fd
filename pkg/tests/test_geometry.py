"""Geometry tests: resampling vs a dense-marching oracle, interval IoU
identities, segment distances, and exact rasterization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lanekit.geometry import (
    Lane, Polyline, lane_from_polyline, line_iou, segment_distance,
    rasterize_lane, mask_iou, SEGMENT_DISTANCE_SENTINEL,
)


def full_lane(xs, h, score=1.0):
    return Lane(xs=np.asarray(xs, float), y_min=0.0, y_max=float(h), h=float(h),
                score=score)


# ----------------------------------------------------------------------
# resampling
# ----------------------------------------------------------------------

def test_vertical_polyline_resamples_constant():
    lane = lane_from_polyline(Polyline([(50, 0), (50, 100)]), n=9, h=100)
    np.testing.assert_array_equal(lane.xs, np.full(9, 50.0))
    assert lane.valid().all()


def test_diagonal_resamples_linearly():
    lane = lane_from_polyline(Polyline([(0, 0), (100, 100)]), n=5, h=100)
    np.testing.assert_allclose(lane.xs, [0, 25, 50, 75, 100], atol=1e-12)


def test_polyline_requires_two_distinct_vertices():
    with pytest.raises(ValueError):
        Polyline([(10, 5)])
    with pytest.raises(ValueError):
        Polyline([(10, 5), (20, 5)])  # same y collapses to one vertex


def test_piecewise_polyline_matches_dense_marching_oracle():
    rng = np.random.default_rng(42)
    ys = np.sort(rng.uniform(5, 95, size=6))
    xs = rng.uniform(0, 160, size=6)
    poly = Polyline(np.stack([xs, ys], axis=1))
    lane = lane_from_polyline(poly, n=72, h=100)

    # Oracle: march each segment densely as convex combinations of its
    # endpoints, then interpolate between the two bracketing dense points.
    dense = []
    for (x0, y0), (x1, y1) in zip(poly.points[:-1], poly.points[1:]):
        t = np.linspace(0.0, 1.0, 2000)
        dense.append(np.stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0)], 1))
    dense = np.concatenate(dense)
    order = np.argsort(dense[:, 1], kind="stable")
    dense = dense[order]

    for i in np.flatnonzero(lane.valid()):
        y = lane.rows()[i]
        j = np.searchsorted(dense[:, 1], y)
        j = min(max(j, 1), len(dense) - 1)
        (x0, y0), (x1, y1) = dense[j - 1], dense[j]
        x_ref = x0 if y1 == y0 else x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        assert abs(lane.xs[i] - x_ref) < 1e-9


def test_rows_outside_extent_invalid():
    lane = lane_from_polyline(Polyline([(10, 40), (30, 80)]), n=11, h=100)
    ys = lane.rows()
    np.testing.assert_array_equal(lane.valid(), (ys >= 40) & (ys <= 80))


# ----------------------------------------------------------------------
# line IoU
# ----------------------------------------------------------------------

def test_line_iou_identical_is_one():
    a = full_lane(np.linspace(10, 60, 20), h=100)
    assert line_iou(a, a, radius=7.5) == pytest.approx(1.0)


def test_line_iou_disjoint_is_zero():
    a = full_lane(np.full(10, 10.0), h=100)
    b = full_lane(np.full(10, 40.0), h=100)
    assert line_iou(a, b, radius=7.5) == 0.0


def test_line_iou_offset_radius_is_one_third():
    # Offset exactly e: per-row overlap e against union 3e.
    e = 7.5
    a = full_lane(np.full(12, 50.0), h=100)
    b = full_lane(np.full(12, 50.0 + e), h=100)
    assert line_iou(a, b, radius=e) == pytest.approx(1 / 3)


def test_line_iou_signed_goes_negative():
    e = 5.0
    a = full_lane(np.full(8, 0.0), h=100)
    b = full_lane(np.full(8, 3 * e), h=100)
    assert line_iou(a, b, radius=e) == 0.0
    assert line_iou(a, b, radius=e, signed=True) == pytest.approx(-0.2)


def test_line_iou_rejects_bad_radius_and_grids():
    a = full_lane(np.zeros(5), h=100)
    with pytest.raises(ValueError):
        line_iou(a, a, radius=0.0)
    with pytest.raises(ValueError):
        line_iou(a, full_lane(np.zeros(6), h=100), radius=1.0)


def test_line_iou_no_common_rows_is_zero():
    a = Lane(np.zeros(10), y_min=0, y_max=30, h=100)
    b = Lane(np.zeros(10), y_min=70, y_max=100, h=100)
    assert line_iou(a, b, radius=5.0) == 0.0


lane_xs = st.lists(st.floats(-50, 250), min_size=8, max_size=8)


@settings(deadline=None, max_examples=60)
@given(xa=lane_xs, xb=lane_xs, shift=st.floats(-100, 100))
def test_line_iou_symmetric_bounded_translation_invariant(xa, xb, shift):
    a, b = full_lane(xa, h=64), full_lane(xb, h=64)
    v = line_iou(a, b, radius=7.5)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(line_iou(b, a, radius=7.5), abs=1e-12)
    a2 = full_lane(np.asarray(xa) + shift, h=64)
    b2 = full_lane(np.asarray(xb) + shift, h=64)
    assert line_iou(a2, b2, radius=7.5) == pytest.approx(v, abs=1e-9)


# ----------------------------------------------------------------------
# segment distance
# ----------------------------------------------------------------------

def test_segment_distance_zero_for_equal():
    a = full_lane(np.linspace(0, 100, 72), h=320)
    for g in range(6):
        assert segment_distance(a, a, g, 6) == 0.0


def test_segment_distance_constant_offset():
    a = full_lane(np.linspace(0, 100, 72), h=320)
    b = full_lane(np.linspace(0, 100, 72) + 5.0, h=320)
    for g in range(6):
        assert segment_distance(a, b, g, 6) == pytest.approx(5.0)


def test_segment_distance_partial_validity_matches_row_oracle():
    rng = np.random.default_rng(1)
    n, h, groups = 72, 320, 6
    a = Lane(rng.uniform(0, 200, n), y_min=40, y_max=280, h=h)
    b = Lane(rng.uniform(0, 200, n), y_min=100, y_max=320, h=h)
    for g in range(groups):
        got = segment_distance(a, b, g, groups)
        rows = []
        for i in range(g * n // groups, (g + 1) * n // groups):
            y = i * h / (n - 1)
            if 40 <= y <= 280 and 100 <= y <= 320:
                rows.append(abs(a.xs[i] - b.xs[i]))
        want = float(np.mean(rows)) if rows else SEGMENT_DISTANCE_SENTINEL
        assert got == pytest.approx(want)


def test_segment_distance_sentinel_when_no_overlap():
    a = Lane(np.zeros(12), y_min=0, y_max=40, h=120)
    b = Lane(np.zeros(12), y_min=80, y_max=120, h=120)
    assert segment_distance(a, b, 0, 2) == SEGMENT_DISTANCE_SENTINEL


@settings(deadline=None, max_examples=40)
@given(xa=lane_xs, xb=lane_xs, g=st.integers(0, 3))
def test_segment_distance_symmetric(xa, xb, g):
    a, b = full_lane(xa, h=64), full_lane(xb, h=64)
    assert segment_distance(a, b, g, 4) == segment_distance(b, a, g, 4)


# ----------------------------------------------------------------------
# rasterization + mask IoU
# ----------------------------------------------------------------------

def test_rasterize_vertical_lane_two_pixels_wide():
    lane = full_lane(np.full(9, 50.0), h=40)
    mask = rasterize_lane(lane, width=2, h=40, w=100)
    cols = np.flatnonzero(mask.any(axis=0))
    np.testing.assert_array_equal(cols, [49, 50])
    assert mask[:, 49:51].all()


def test_rasterize_outside_image_empty():
    lane = full_lane(np.full(9, -500.0), h=40)
    assert not rasterize_lane(lane, width=4, h=40, w=100).any()


def test_rasterize_no_valid_rows_empty():
    lane = Lane(np.zeros(10), y_min=3.0, y_max=4.0, h=100)
    assert not lane.valid().any()
    assert not rasterize_lane(lane, width=4, h=100, w=100).any()


def test_rasterize_curved_lane_matches_pixel_oracle():
    rng = np.random.default_rng(3)
    xs = 30 + np.cumsum(rng.uniform(-4, 4, size=10))
    lane = full_lane(xs, h=45)
    width = 6.0
    mask = rasterize_lane(lane, width=width, h=45, w=60)

    pts = lane.points()
    ref = np.zeros((45, 60), dtype=bool)
    for r in range(45):
        for c in range(60):
            px, py = c + 0.5, r + 0.5
            best = np.inf
            for (ax, ay), (bx, by) in zip(pts[:-1], pts[1:]):
                dx, dy = bx - ax, by - ay
                t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
                t = min(max(t, 0.0), 1.0)
                best = min(best, (px - ax - t * dx) ** 2 + (py - ay - t * dy) ** 2)
            ref[r, c] = best <= (width / 2) ** 2
    assert np.array_equal(mask, ref)


def test_mask_iou_basic_identities():
    m = np.zeros((10, 10), bool)
    m[2:8, 3:7] = True
    assert mask_iou(m, m) == 1.0
    assert mask_iou(m, np.zeros_like(m)) == 0.0
    assert mask_iou(np.zeros_like(m), np.zeros_like(m)) == 0.0


def test_mask_iou_half_overlapping_rectangles():
    # Two 4x10 rectangles overlapping over half their area: IoU = 1/3.
    m1 = np.zeros((20, 20), bool)
    m2 = np.zeros((20, 20), bool)
    m1[0:4, 0:10] = True
    m2[0:4, 5:15] = True
    assert mask_iou(m1, m2) == pytest.approx(1 / 3)


def test_mask_iou_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        mask_iou(np.zeros((4, 4), bool), np.zeros((4, 5), bool))


def test_strip_overlap_matches_analytic_within_boundary_pixels():
    # Two full-height vertical strips: IoU from pixel counts must track the
    # analytic (width - d) / (width + d) within 2 boundary pixels per row.
    h, w, width = 60, 120, 10.0
    for d in (2.0, 2.5, 5.0):
        a = rasterize_lane(full_lane(np.full(7, 40.0), h=h), width, h, w)
        b = rasterize_lane(full_lane(np.full(7, 40.0 + d), h=h), width, h, w)
        inter = np.logical_and(a, b).sum() / h
        union = np.logical_or(a, b).sum() / h
        assert abs(inter - (width - d)) <= 2.0
        assert abs(union - (width + d)) <= 2.0
