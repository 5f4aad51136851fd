"""End-to-end detector: forward pass, training loop, inference, reporting."""

import json
import os

import numpy as np
import pytest

from lanekit.config import ModelConfig
from lanekit.geometry import Lane, lane_from_polyline, line_iou
from lanekit.pipeline import (TrainingDiverged, best_proposal_iou,
                              count_parameters, flip_lane, flip_polyline,
                              head_macs, infer, load_detector,
                              make_anchor_proposals, nms, oracle_proposals,
                              prepare_scene, render_overlay, train,
                              LaneDetector)
from lanekit.sampler import FeaturePyramid, sample_grid_points
from lanekit.synthdata import SceneSpec, generate_dataset, generate_scene

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def tiny_cfg(**overrides) -> ModelConfig:
    base = dict(h=32, w=64, grid_h=2, grid_w=4, n_offsets=24, n_points=12,
                groups=3, widths=(4, 8, 16), d_model=12, channels=24,
                batch_size=2, total_iters=20, warmup_iters=3,
                checkpoint_every=10, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_spec() -> SceneSpec:
    return SceneSpec(h=32, w=64, lane_count=(2, 3), min_bottom_gap=5.0)


@pytest.fixture(scope="module")
def detector():
    return LaneDetector(tiny_cfg())


@pytest.fixture(scope="module")
def tiny_scenes():
    return generate_dataset(range(8), tiny_spec())


def test_forward_shapes(detector, tiny_scenes):
    cfg = detector.cfg
    images = np.stack([s.image for s in tiny_scenes[:2]])
    out = detector.forward(images)
    n = cfg.n_proposals
    assert out.scores.shape == (2, n)
    assert out.xs.shape == (2, n, cfg.n_offsets)
    assert out.y_min.shape == (2, n)
    assert out.y_max.shape == (2, n)
    assert out.attn_logits.shape == (2, n, n, cfg.groups)
    assert len(out.proposals) == 2 and len(out.proposals[0]) == n


def test_forward_rejects_wrong_image_shape(detector):
    with pytest.raises(ValueError):
        detector.forward(np.zeros((1, 16, 16, 3), np.uint8))


def test_batched_sampling_matches_reference_sampler(detector, tiny_scenes):
    """The matrix-based batch sampler equals per-proposal grid sampling."""
    cfg = detector.cfg
    images = np.stack([s.image for s in tiny_scenes[:2]])
    pyr_t, dirs_t = detector.extractor(images)
    probe_xs = []
    proposals = []
    for b in range(2):
        angles = np.clip(dirs_t[-1].data[b], 1e-4, 1 - 1e-4) * 180.0
        props = detector.proposals_from_map(angles)
        proposals.append(props)
        probe_xs.append(detector._probe_xs(props))
    raw = detector._sample_batch(pyr_t, probe_xs)

    for b in range(2):
        pyramid = FeaturePyramid(levels=[
            (s, pyr_t[k][b]) for k, s in enumerate(cfg.strides)])
        ys = np.broadcast_to(detector._probe_ys,
                             (cfg.n_proposals, cfg.n_points))
        ref = sample_grid_points(pyramid, probe_xs[b], ys, detector.z)
        np.testing.assert_allclose(raw.data[b], ref.data, atol=1e-5)


def test_infer_deterministic(detector, tiny_scenes):
    image = tiny_scenes[0].image
    a = infer(detector, image)
    b = infer(detector, image)
    assert len(a) == len(b)
    for la, lb in zip(a, b):
        assert np.array_equal(la.xs, lb.xs)
        assert la.y_min == lb.y_min and la.y_max == lb.y_max
        assert la.score == lb.score


def test_one_scene_overfit(tmp_path):
    cfg = tiny_cfg(total_iters=300, warmup_iters=10, checkpoint_every=150,
                   batch_size=2, flip_augment=False, lr=4e-3)
    scenes = generate_dataset(range(1), tiny_spec())
    result = train(cfg, scenes, tmp_path / "run", log_every=10)
    steps = np.array([r["step"] for r in result.log])
    totals = np.array([r["total"] for r in result.log])
    early = totals[steps <= 20].max()
    late = totals[steps > 280].mean()
    assert late < 0.25 * early, f"no overfit: early {early}, late {late}"


def test_divergence_aborts_and_keeps_checkpoint(tmp_path):
    cfg = tiny_cfg(total_iters=400, warmup_iters=1, lr=1e5,
                   checkpoint_every=5)
    scenes = generate_dataset(range(2), tiny_spec())
    with pytest.raises(TrainingDiverged) as err:
        train(cfg, scenes, tmp_path / "run", log_every=5)
    ckpt = err.value.checkpoint
    detector, arrays, meta = load_detector(ckpt)
    detector.load_arrays(arrays)
    assert meta["step"] < err.value.step
    assert np.isfinite(
        np.concatenate([a.reshape(-1) for a in arrays.values()])).all()


def test_resume_continues_step_counter(tmp_path):
    scenes = generate_dataset(range(2), tiny_spec())
    cfg = tiny_cfg(total_iters=6, checkpoint_every=3)
    first = train(cfg, scenes, tmp_path / "run", log_every=1)
    assert first.steps == 6
    cfg2 = tiny_cfg(total_iters=12, checkpoint_every=3)
    second = train(cfg2, scenes, tmp_path / "run2", log_every=1,
                   resume_from=first.checkpoint)
    assert second.steps == 12
    steps = [r["step"] for r in second.log]
    assert steps == sorted(steps)
    assert steps[-1] == 12 and min(steps) >= 1


def test_checkpoint_roundtrip_is_bit_identical(tmp_path, tiny_scenes):
    cfg = tiny_cfg(total_iters=4, checkpoint_every=2)
    result = train(cfg, list(tiny_scenes[:2]), tmp_path / "run", log_every=2)
    image = tiny_scenes[2].image
    before = result.detector.forward(image[None])

    detector, arrays, meta = load_detector(result.checkpoint)
    detector.load_arrays(arrays)
    after = detector.forward(image[None])
    assert np.array_equal(before.scores.data, after.scores.data)
    assert np.array_equal(before.xs.data, after.xs.data)
    assert np.array_equal(before.y_min.data, after.y_min.data)
    assert np.array_equal(before.y_max.data, after.y_max.data)


def _random_lanes(rng, n, h=32.0, n_rows=24):
    lanes = []
    for _ in range(n):
        x0 = rng.uniform(5, 59)
        slope = rng.uniform(-0.5, 0.5)
        xs = x0 + slope * (np.arange(n_rows) * h / (n_rows - 1) - h)
        lanes.append(Lane(xs, y_min=rng.uniform(0, 8),
                          y_max=rng.uniform(24, 32), h=h,
                          score=float(rng.random())))
    return lanes


def test_nms_postconditions():
    rng = np.random.default_rng(0)
    for trial in range(50):
        lanes = _random_lanes(rng, int(rng.integers(1, 7)))
        thr, max_lanes = 0.4, 4
        kept = nms(lanes, thr=thr, radius=7.5, max_lanes=max_lanes)
        scores = [l.score for l in kept]
        assert scores == sorted(scores, reverse=True)
        assert len(kept) <= max_lanes
        for i, a in enumerate(kept):
            for b in kept[i + 1:]:
                assert line_iou(a, b, 7.5) < thr
        if len(kept) < max_lanes:
            for lane in lanes:
                if any(lane is k for k in kept):
                    continue
                suppressor = [k for k in kept
                              if line_iou(lane, k, 7.5) >= thr
                              and k.score >= lane.score]
                assert suppressor, "dropped lane without an overlapping keeper"


def test_render_overlay_empty_is_identity(tiny_scenes):
    image = tiny_scenes[0].image
    out = render_overlay(image, [])
    assert np.array_equal(out, image)
    assert out is not image


def test_render_overlay_marks_lane_pixels(tiny_scenes):
    scene = tiny_scenes[0]
    lanes = [lane_from_polyline(p, 24, float(scene.image.shape[0]))
             for p in scene.lanes]
    out = render_overlay(scene.image, lanes)
    assert out.shape == scene.image.shape and out.dtype == np.uint8
    assert not np.array_equal(out, scene.image)


def test_render_overlay_matches_golden(tiny_scenes):
    scene = tiny_scenes[1]
    lanes = [lane_from_polyline(p, 24, float(scene.image.shape[0]))
             for p in scene.lanes]
    out = render_overlay(scene.image, lanes)
    golden_path = os.path.join(DATA_DIR, "overlay_golden.npy")
    golden = np.load(golden_path)
    assert np.array_equal(out, golden)


def test_flip_polyline_involution(tiny_scenes):
    w = 64.0
    for poly in tiny_scenes[0].lanes:
        twice = flip_polyline(flip_polyline(poly, w), w)
        np.testing.assert_allclose(twice.points, poly.points, atol=1e-12)


def test_flip_lane_mirrors_x():
    lane = Lane(np.linspace(10, 30, 24), 0.0, 32.0, 32.0)
    flipped = flip_lane(lane, 64.0)
    np.testing.assert_allclose(flipped.xs, 64.0 - lane.xs)
    assert flipped.y_min == lane.y_min and flipped.y_max == lane.y_max


def test_prepare_scene_flip_mirrors_targets(tiny_scenes):
    cfg = tiny_cfg(flip_augment=True)
    plain = prepare_scene(tiny_scenes[0], cfg, flipped=False)
    mirrored = prepare_scene(tiny_scenes[0], cfg, flipped=True)
    assert np.array_equal(mirrored.image, plain.image[:, ::-1])
    for a, b in zip(plain.gt_lanes, mirrored.gt_lanes):
        np.testing.assert_allclose(b.xs, cfg.w - a.xs, atol=1e-9)


def test_oracle_proposals_cover_tiny_scene(tiny_scenes):
    cfg = tiny_cfg()
    covered = []
    for scene in tiny_scenes:
        props = oracle_proposals(scene, cfg)
        covered.extend(best_proposal_iou(props, scene, cfg))
    assert np.mean(np.asarray(covered) >= 0.4) > 0.8


def test_anchor_proposals_count_and_spread():
    cfg = tiny_cfg()
    props = make_anchor_proposals(cfg)
    assert len(props) == cfg.n_proposals
    bottoms = sorted({float(l.xs[-1]) for l in props.lanes})
    assert len(bottoms) == cfg.grid_w


def test_count_parameters_consistent(detector):
    table = count_parameters(detector)
    total = table["total"]
    parts = sum(v for k, v in table.items()
                if k not in ("total", "head_macs"))
    assert parts == total
    direct = sum(p.data.size for p in detector._all_params())
    assert total == direct


def test_head_macs_linear_in_proposals():
    cfg = tiny_cfg()
    assert head_macs(cfg, 2 * cfg.n_proposals) == \
        2 * head_macs(cfg, cfg.n_proposals)
