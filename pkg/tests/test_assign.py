"""Assignment and loss tests: Hungarian vs an exhaustive permutation
oracle, hand-computed costs, scalar loss evaluations, and optimization
sanity of the IoU loss."""

import itertools
import math

import numpy as np
import pytest

from lanekit.assign import (
    LossWeights, MatchResult, attention_loss, build_cost, direction_loss,
    focal_loss, hungarian_match, liou_loss, total_loss,
)
from lanekit.geometry import Lane
from lanekit.numerics import evaluate, grad_check, gradients, parameter, tensor
from lanekit.refine import AttentionTarget
from lanekit.sketch import DirectionMap


def full_lane(xs, h=320.0):
    return Lane(np.asarray(xs, float), 0.0, h, h)


# ----------------------------------------------------------------------
# cost matrix
# ----------------------------------------------------------------------

def test_cost_zero_for_identical_lane():
    lane = full_lane(np.linspace(50, 120, 72))
    cost = build_cost([lane], [lane], radius=7.5)
    assert cost[0, 0] == pytest.approx(0.0)


def test_cost_above_one_for_disjoint_lanes():
    a = full_lane(np.full(72, 10.0))
    b = full_lane(np.full(72, 400.0))
    assert build_cost([a], [b], radius=7.5)[0, 0] > 1.0


def test_cost_matches_hand_computed_two_by_two():
    e = 5.0
    props = [full_lane(np.full(10, 100.0)), full_lane(np.full(10, 110.0))]
    gts = [full_lane(np.full(10, 100.0)), full_lane(np.full(10, 130.0))]
    cost = build_cost(props, gts, radius=e)
    # offset 0 -> iou 1; offset 10 = 2e -> 0; offset 30 -> (10-30)/(10+30);
    # offset 20 -> (10-20)/(10+20).
    want = np.array([[0.0, 1.0 - (-20.0 / 40.0)],
                     [1.0 - 0.0, 1.0 - (-10.0 / 30.0)]])
    np.testing.assert_allclose(cost, want, atol=1e-12)


# ----------------------------------------------------------------------
# matching
# ----------------------------------------------------------------------

def test_match_single_pair():
    res = hungarian_match(np.array([[0.3]]))
    assert res.pairs == [(0, 0)] and res.labels.tolist() == [1.0]


def test_match_prefers_diagonal():
    cost = np.ones((4, 4)) + np.eye(4) * -0.9
    res = hungarian_match(cost)
    assert res.pairs == [(0, 0), (1, 1), (2, 2), (3, 3)]


def test_match_empty_gts():
    res = hungarian_match(np.zeros((5, 0)))
    assert res.pairs == [] and res.labels.sum() == 0


def test_match_rejects_more_gts_than_proposals():
    with pytest.raises(ValueError, match="proposal grid"):
        hungarian_match(np.zeros((2, 3)))


def test_match_result_rejects_duplicates():
    with pytest.raises(ValueError):
        MatchResult(pairs=[(0, 0), (0, 1)], labels=np.zeros(3))


def _oracle_best(cost):
    n_props, n_gts = cost.shape
    perms = np.array(list(itertools.permutations(range(n_props), n_gts)))
    totals = cost[perms, np.arange(n_gts)].sum(axis=1)
    ties = np.flatnonzero(totals <= totals.min() + 1e-12)
    pair_sets = [sorted((int(p), m) for m, p in enumerate(perms[t]))
                 for t in ties]
    return totals.min(), min(pair_sets)


def test_match_equals_permutation_oracle_on_random_costs():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        cost = rng.random((6, 6))
        res = hungarian_match(cost)
        got = sum(cost[i, m] for i, m in res.pairs)
        best, _ = _oracle_best(cost)
        assert got == pytest.approx(best, abs=1e-12)
        assert len(res.pairs) == 6
        assert res.labels.sum() == 6


def test_match_breaks_ties_lexicographically():
    rng = np.random.default_rng(1)
    for trial in range(200):
        cost = rng.integers(0, 3, size=(5, 4)).astype(float)
        res = hungarian_match(cost)
        best, pairs = _oracle_best(cost)
        assert sum(cost[i, m] for i, m in res.pairs) == pytest.approx(best)
        assert sorted(res.pairs) == pairs


# ----------------------------------------------------------------------
# focal loss
# ----------------------------------------------------------------------

def test_focal_zero_when_confidently_correct():
    scores = tensor(np.array([1.0, 0.0]))
    loss = evaluate(focal_loss(scores, np.array([1.0, 0.0])))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_focal_single_positive_half_score():
    loss = evaluate(focal_loss(tensor(np.array([0.5])), np.array([1.0])))
    assert loss == pytest.approx(0.25 * 0.25 * math.log(2.0), rel=1e-9)
    assert loss == pytest.approx(0.04332, abs=5e-6)


def test_focal_gamma_zero_balanced_is_cross_entropy():
    rng = np.random.default_rng(2)
    p = rng.uniform(0.05, 0.95, 12)
    labels = (rng.random(12) < 0.5).astype(float)
    loss = evaluate(focal_loss(tensor(p), labels, alpha=0.5, gamma=0.0))
    ce = -np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p))
    assert loss == pytest.approx(0.5 * ce, rel=1e-9)


def test_focal_nonnegative_and_decreasing_in_pt():
    ps = np.linspace(0.02, 0.98, 25)
    losses = [evaluate(focal_loss(tensor(np.array([p])), np.array([1.0])))
              for p in ps]
    assert all(v >= 0 for v in losses)
    assert all(a > b for a, b in zip(losses, losses[1:]))


# ----------------------------------------------------------------------
# line-IoU loss
# ----------------------------------------------------------------------

def test_liou_zero_for_exact_prediction():
    gt = full_lane(np.linspace(100, 220, 72))
    assert evaluate(liou_loss(tensor(gt.xs), gt, 7.5)) == pytest.approx(0.0)


def test_liou_offset_radius_is_two_thirds():
    e = 7.5
    gt = full_lane(np.full(72, 90.0))
    loss = evaluate(liou_loss(tensor(gt.xs + e), gt, e))
    assert loss == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_liou_gradient_pulls_toward_gt():
    gt = full_lane(np.full(12, 100.0))
    for offset in (-30.0, -4.0, 4.0, 30.0):
        xs = parameter(gt.xs + offset, "xs")
        g = gradients(liou_loss(xs, gt, 7.5), [xs])[xs]
        # descending along -g moves xs toward the gt on every row
        assert np.all(np.sign(g) == np.sign(offset))


def test_liou_no_valid_rows_constant_one(caplog):
    gt = Lane(np.full(12, 50.0), y_min=3.0, y_max=4.0, h=120.0)
    assert not gt.valid().any()
    with caplog.at_level("WARNING"):
        loss = liou_loss(tensor(np.full(12, 50.0)), gt, 7.5)
    assert evaluate(loss) == 1.0
    assert "no valid rows" in caplog.text


def test_liou_descent_recovers_twenty_pixel_offset():
    # A rigid 20 px offset, plain gradient descent with step 0.5. The
    # (2e+d)^2 / 4e dynamics need ~860 steps to pass below 1 px; assert
    # convergence with a 1000-step budget.
    gt = full_lane(np.full(72, 80.0))
    shift = parameter(np.array(20.0), "shift")
    for _ in range(1000):
        loss = liou_loss(tensor(gt.xs) + shift, gt, 7.5)
        shift.data = shift.data - 0.5 * gradients(loss, [shift])[shift]
    assert abs(shift.data) < 1.0


# ----------------------------------------------------------------------
# direction loss
# ----------------------------------------------------------------------

def _gt_map(angles, mask):
    return DirectionMap(np.asarray(angles, float), h=64, w=160,
                        mask=np.asarray(mask, bool))


def test_direction_loss_zero_on_match():
    angles = np.full((4, 10), 73.0)
    gt = _gt_map(angles, np.ones((4, 10)))
    loss = direction_loss(tensor(angles / 180.0), gt)
    assert evaluate(loss) == pytest.approx(0.0)


def test_direction_loss_empty_mask_zero():
    gt = _gt_map(np.full((4, 10), 73.0), np.zeros((4, 10)))
    loss = direction_loss(tensor(np.zeros((4, 10))), gt)
    assert evaluate(loss) == 0.0


def test_direction_loss_single_cell_18_degrees():
    angles = np.full((4, 10), 90.0)
    mask = np.zeros((4, 10))
    mask[2, 5] = 1
    gt = _gt_map(angles, mask)
    pred = np.full((4, 10), 90.0 / 180.0)
    pred[2, 5] = 108.0 / 180.0
    assert evaluate(direction_loss(tensor(pred), gt)) == pytest.approx(0.1)


def test_direction_loss_masks_out_unsupervised_cells():
    angles = np.full((4, 10), 90.0)
    mask = np.zeros((4, 10))
    mask[0, 0] = 1
    gt = _gt_map(angles, mask)
    pred = np.full((4, 10), 0.5)
    pred[3, 9] = 0.99  # unmasked cell: must not affect the loss
    assert evaluate(direction_loss(tensor(pred), gt)) == pytest.approx(0.0)


# ----------------------------------------------------------------------
# attention loss
# ----------------------------------------------------------------------

def _one_hot_target(n_props, groups, pairs):
    weights = np.zeros((n_props, n_props, groups))
    positives = np.zeros(n_props, bool)
    valid = np.zeros((n_props, groups), bool)
    for i, j in pairs:
        positives[i] = True
        valid[i] = True
        weights[i, j, :] = 1.0
    return AttentionTarget(weights, positives, valid)


def test_attention_loss_uniform_logits_is_log_l():
    n = 40
    target = _one_hot_target(n, 6, [(3, 17)])
    loss = attention_loss(tensor(np.zeros((n, n, 6))), target)
    assert evaluate(loss) == pytest.approx(math.log(40.0), rel=1e-9)


def test_attention_loss_vanishes_when_peaked():
    n = 8
    target = _one_hot_target(n, 6, [(2, 5)])
    logits = np.zeros((n, n, 6))
    logits[2, 5, :] = 40.0
    assert evaluate(attention_loss(tensor(logits), target)) == pytest.approx(
        0.0, abs=1e-12)


def test_attention_loss_no_positives_zero():
    target = _one_hot_target(6, 6, [])
    assert evaluate(attention_loss(tensor(np.zeros((6, 6, 6))), target)) == 0.0


def test_attention_loss_respects_group_validity():
    n = 4
    weights = np.zeros((n, n, 2))
    weights[0, 1, 0] = 1.0
    positives = np.array([True, False, False, False])
    valid = np.zeros((n, 2), bool)
    valid[0, 0] = True  # group 1 has no target
    target = AttentionTarget(weights, positives, valid)
    loss = evaluate(attention_loss(tensor(np.zeros((n, n, 2))), target))
    assert loss == pytest.approx(math.log(4.0))  # averaged over 1 pair only


def test_attention_loss_gradient():
    rng = np.random.default_rng(3)
    n = 5
    target = _one_hot_target(n, 3, [(1, 4), (0, 2)])

    def f(t):
        return attention_loss(t.reshape(n, n, 3), target)

    report = grad_check(f, rng.standard_normal(n * n * 3), tol=1e-6)
    assert report.passed, str(report)


# ----------------------------------------------------------------------
# total loss
# ----------------------------------------------------------------------

def test_total_all_zero():
    zero = tensor(0.0)
    total, report = total_loss(zero, zero, zero, zero)
    assert evaluate(total) == 0.0 and report.total == 0.0


def test_total_unit_parts_paper_weights():
    one = tensor(1.0)
    total, report = total_loss(one, one, one, one)
    assert evaluate(total) == pytest.approx(3.1)
    assert report.l_cls == report.l_reg == report.l_dir == report.l_attn == 1.0


def test_total_decomposition_random_parts():
    rng = np.random.default_rng(4)
    for _ in range(20):
        parts = rng.uniform(0, 5, 4)
        w = LossWeights(*rng.uniform(0, 3, 4))
        total, report = total_loss(*[tensor(p) for p in parts], weights=w)
        want = (w.w_cls * parts[0] + w.w_reg * parts[1]
                + w.w_dir * parts[2] + w.w_attn * parts[3])
        assert evaluate(total) == pytest.approx(want, abs=1e-12)
        assert report.total == pytest.approx(want, abs=1e-12)


def test_total_scaling_one_weight_scales_its_term_only():
    parts = [tensor(v) for v in (0.5, 1.5, 2.0, 3.0)]
    base, _ = total_loss(*parts, weights=LossWeights(w_dir=0.05))
    bumped, _ = total_loss(*parts, weights=LossWeights(w_dir=0.10))
    assert evaluate(bumped) - evaluate(base) == pytest.approx(0.05 * 2.0)


def test_total_rejects_nonfinite_part():
    ok = tensor(1.0)
    with pytest.raises(FloatingPointError, match="regression"):
        total_loss(ok, tensor(float("nan")), ok, ok)


def test_loss_weights_reject_negative():
    with pytest.raises(ValueError):
        LossWeights(w_cls=-1.0)
