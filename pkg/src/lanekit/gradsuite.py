"""Randomized gradient verification suites over the differentiable stack.

Every check builds a small random instance of one component (feature
sampler, segment attention, prediction heads, or a loss), reduces its
output to a scalar through a fixed random projection, and compares the
analytic gradient against central finite differences via
:func:`lanekit.numerics.gradcheck.grad_check`. The suites double as the
implementation behind the ``gradcheck`` CLI subcommand and the gradient
acceptance tests, so instance sizes are kept small enough that a full run
of every suite finishes in well under five minutes on one core.

All checks run in 64-bit with a five-point stencil; coordinates sitting on
kinks (ReLU corners, interval-overlap boundaries) are skipped by the
checker rather than failed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .assign import attention_loss, direction_loss, focal_loss, liou_loss
from .geometry import Lane
from .numerics.gradcheck import GradCheckReport, grad_check
from .numerics.tensor import Tensor, gradients, tensor
from .refine import AttentionTarget, Classifier, Regressor, SegmentAttention
from .sampler import FeaturePyramid, GroupedProjection, sample_grid_points
from .sketch import DirectionMap

DEFAULT_TOL = 1e-4
DEFAULT_H = 1e-5


@dataclass
class CheckResult:
    """Outcome of one randomized instance of one named check."""

    suite: str
    check: str
    instance: int
    max_rel_err: float
    n_checked: int
    passed: bool

    def __str__(self):
        state = "ok" if self.passed else "FAIL"
        return (f"{self.suite}/{self.check}[{self.instance}]: "
                f"max rel err {self.max_rel_err:.3e} "
                f"({self.n_checked} coords) {state}")


def _projection(rng, shape) -> np.ndarray:
    """Fixed random weights reducing an output tensor to a scalar."""
    return rng.standard_normal(shape)


def _pyramid_instance(rng, d=2, h=8, w=12, strides=(2, 4)):
    """A small random two-level pyramid plus probe coordinates."""
    feats = [tensor(rng.standard_normal((d, h // s, w // s)))
             for s in strides]
    pyramid = FeaturePyramid(levels=list(zip(strides, feats)))
    n_lanes, n_points = 2, 3
    xs = rng.uniform(1.0, w - 1.0, (n_lanes, n_points))
    ys = rng.uniform(1.0, h - 1.0, (n_lanes, n_points))
    z = rng.uniform(0.8, 2.2, n_points)
    return pyramid, xs, ys, z, (d, h, w, strides, n_lanes, n_points)


def _check_sampler_z(rng, h_step):
    pyramid, xs, ys, z, dims = _pyramid_instance(rng)
    d, _, _, _, n_lanes, n_points = dims
    proj = _projection(rng, (n_lanes, n_points, d))

    def f(zt: Tensor) -> Tensor:
        out = sample_grid_points(pyramid, xs, ys, zt)
        return (out * tensor(proj)).sum()

    return grad_check(f, z, tol=DEFAULT_TOL, h=h_step)


def _check_sampler_features(rng, h_step):
    pyramid, xs, ys, z, dims = _pyramid_instance(rng)
    d, h, w, strides, n_lanes, n_points = dims
    proj = _projection(rng, (n_lanes, n_points, d))
    shapes = [(d, h // s, w // s) for s in strides]
    sizes = [int(np.prod(s)) for s in shapes]
    flat0 = np.concatenate([lvl.data.reshape(-1)
                            for _, lvl in pyramid.levels])

    def f(flat: Tensor) -> Tensor:
        levels, off = [], 0
        for stride, shape, size in zip(strides, shapes, sizes):
            levels.append((stride, flat[off:off + size].reshape(*shape)))
            off += size
        pyr = FeaturePyramid(levels=levels)
        out = sample_grid_points(pyr, xs, ys, z)
        return (out * tensor(proj)).sum()

    return grad_check(f, flat0, tol=DEFAULT_TOL, h=h_step)


def _check_sampler_coords(rng, h_step):
    pyramid, xs, ys, z, dims = _pyramid_instance(rng)
    d, _, _, _, n_lanes, n_points = dims
    proj = _projection(rng, (n_lanes, n_points, d))
    point = np.concatenate([xs.reshape(-1), ys.reshape(-1)])

    def f(coords: Tensor) -> Tensor:
        half = n_lanes * n_points
        xs_t = coords[:half].reshape(n_lanes, n_points)
        ys_t = coords[half:].reshape(n_lanes, n_points)
        out = sample_grid_points(pyramid, xs_t, ys_t, z)
        return (out * tensor(proj)).sum()

    return grad_check(f, point, tol=DEFAULT_TOL, h=h_step)


def _lsam_instance(rng, n_lanes=4, c=8, groups=2):
    lsam = SegmentAttention(np.random.default_rng(rng.integers(2**32)),
                            c, groups)
    x = rng.standard_normal((n_lanes, c))
    return lsam, x, (n_lanes, c, groups)


def _check_lsam_input(rng, h_step):
    lsam, x, (n_lanes, c, _) = _lsam_instance(rng)
    proj = _projection(rng, (n_lanes, c))

    def f(xt: Tensor) -> Tensor:
        refined, _, _ = lsam(xt)
        return (refined * tensor(proj)).sum()

    return grad_check(f, x, tol=DEFAULT_TOL, h=h_step)


def _check_lsam_params(rng, h_step):
    lsam, x, (n_lanes, c, _) = _lsam_instance(rng)
    proj = _projection(rng, (n_lanes, c))
    params = lsam.params()
    target = params[int(rng.integers(len(params)))]
    return _param_grad_check(lsam, target, x, proj, h_step)


def _param_grad_check(module, target, x, proj, h_step, call=None):
    """Finite-difference a module output w.r.t. one parameter tensor.

    The module's forward pass reads `target` (a leaf parameter) directly,
    so the analytic gradient comes from the real graph while perturbed
    evaluations temporarily overwrite `target.data`.
    """
    if call is None:
        def call():
            refined, _, _ = module(tensor(x))
            return (refined * tensor(proj)).sum()

    saved = target.data.copy()
    # Run the whole check in 64-bit: a float32 parameter quantizes the
    # h-sized bumps and its graph evaluates with ~1e-7 noise, which at
    # h=1e-5 shows up as ~1e-2 relative error in the stencil.
    target.data = saved.astype(np.float64)
    out = call()
    analytic = gradients(out, [target])[target].reshape(-1)
    f0 = float(out.data)

    flat0 = saved.reshape(-1).astype(np.float64)
    n = flat0.size
    rel = np.full(n, np.nan)
    skipped = []

    def eval_at(vec):
        target.data = vec.reshape(saved.shape)
        return float(call().data)

    try:
        for i in range(n):
            bump = np.zeros(n)
            bump[i] = h_step
            fp1 = eval_at(flat0 + bump)
            fm1 = eval_at(flat0 - bump)
            fp2 = eval_at(flat0 + 2 * bump)
            fm2 = eval_at(flat0 - 2 * bump)
            left = (f0 - fm2) / (2 * h_step)
            right = (fp2 - f0) / (2 * h_step)
            scale = max(1.0, abs(left), abs(right))
            if abs(left - right) > 1e-2 * scale:
                skipped.append(i)
                continue
            fd = (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12.0 * h_step)
            floor = 1e-6 * max(1.0, abs(f0))
            rel[i] = abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]),
                                                 floor)
    finally:
        target.data = saved

    checked = ~np.isnan(rel)
    max_err = float(rel[checked].max()) if checked.any() else float("inf")
    return GradCheckReport(max_rel_err=max_err, tol=DEFAULT_TOL,
                           n_checked=int(checked.sum()), skipped=skipped,
                           rel_err=rel)


def _check_heads_classifier(rng, h_step):
    c = 8
    clf = Classifier(np.random.default_rng(rng.integers(2**32)), c)
    x = rng.standard_normal((5, c))
    proj = _projection(rng, (5,))

    def f(xt: Tensor) -> Tensor:
        return (clf(xt) * tensor(proj)).sum()

    return grad_check(f, x, tol=DEFAULT_TOL, h=h_step)


def _check_heads_classifier_params(rng, h_step):
    c = 8
    clf = Classifier(np.random.default_rng(rng.integers(2**32)), c)
    x = rng.standard_normal((5, c))
    proj = _projection(rng, (5,))
    params = clf.params()
    target = params[int(rng.integers(len(params)))]

    def call():
        return (clf(tensor(x)) * tensor(proj)).sum()

    return _param_grad_check(clf, target, x, proj, h_step, call=call)


def _check_heads_regressor(rng, h_step):
    c, n_rows, img_h = 8, 6, 64.0
    reg = Regressor(np.random.default_rng(rng.integers(2**32)), c, n_rows,
                    img_h)
    x = rng.standard_normal((4, c))
    sketch = rng.uniform(10.0, 100.0, (4, n_rows))
    proj_xs = _projection(rng, (4, n_rows))
    proj_ext = _projection(rng, (2, 4))

    def f(xt: Tensor) -> Tensor:
        xs, y_min, y_max = reg(xt, sketch)
        return ((xs * tensor(proj_xs)).sum()
                + (y_min * tensor(proj_ext[0])).sum()
                + (y_max * tensor(proj_ext[1])).sum())

    return grad_check(f, x, tol=DEFAULT_TOL, h=h_step)


def _check_heads_projection(rng, h_step):
    n_points, d, c, groups = 4, 3, 8, 2
    prj = GroupedProjection(np.random.default_rng(rng.integers(2**32)),
                            n_points, d, c, groups)
    raw = rng.standard_normal((3, n_points, d))
    proj = _projection(rng, (3, c))

    def f(rt: Tensor) -> Tensor:
        return (prj(rt) * tensor(proj)).sum()

    return grad_check(f, raw, tol=DEFAULT_TOL, h=h_step)


def _check_loss_focal(rng, h_step):
    n = 12
    scores = rng.uniform(0.05, 0.95, n)
    labels = (rng.random(n) < 0.3).astype(np.float64)

    def f(st: Tensor) -> Tensor:
        return focal_loss(st, labels)

    return grad_check(f, scores, tol=DEFAULT_TOL, h=h_step)


def _check_loss_liou(rng, h_step):
    n, img_h = 10, 64.0
    gt_xs = rng.uniform(20.0, 140.0, n)
    gt = Lane(gt_xs, y_min=float(rng.uniform(0, 10)),
              y_max=float(rng.uniform(50, 64)), h=img_h)
    pred = gt_xs + rng.uniform(-6.0, 6.0, n)

    def f(xt: Tensor) -> Tensor:
        return liou_loss(xt, gt, radius=7.5)

    return grad_check(f, pred, tol=DEFAULT_TOL, h=h_step)


def _check_loss_direction(rng, h_step):
    hd, wd = 3, 4
    angles = rng.uniform(20.0, 160.0, (hd, wd))
    mask = rng.random((hd, wd)) < 0.7
    if not mask.any():
        mask[1, 1] = True
    gt = DirectionMap(angles=angles, mask=mask, h=64.0, w=160.0)
    pred = np.clip(angles / 180.0 + rng.uniform(-0.1, 0.1, (hd, wd)),
                   0.01, 0.99)

    def f(pt: Tensor) -> Tensor:
        return direction_loss(pt, gt)

    return grad_check(f, pred, tol=DEFAULT_TOL, h=h_step)


def _check_loss_attention(rng, h_step):
    n_lanes, groups = 5, 2
    positives = rng.random(n_lanes) < 0.5
    if not positives.any():
        positives[0] = True
    w = np.zeros((n_lanes, n_lanes, groups))
    group_valid = np.zeros((n_lanes, groups), dtype=bool)
    for i in np.flatnonzero(positives):
        for g in range(groups):
            if rng.random() < 0.85:
                w[i, int(rng.integers(n_lanes)), g] = 1.0
                group_valid[i, g] = True
    if not group_valid.any():
        i = int(np.flatnonzero(positives)[0])
        w[i, 0, 0] = 1.0
        group_valid[i, 0] = True
    target = AttentionTarget(weights=w, positives=positives,
                             group_valid=group_valid)
    logits = rng.standard_normal((n_lanes, n_lanes, groups))

    def f(lt: Tensor) -> Tensor:
        return attention_loss(lt, target)

    return grad_check(f, logits, tol=DEFAULT_TOL, h=h_step)


SUITES = {
    "sampler": [
        ("z", _check_sampler_z),
        ("features", _check_sampler_features),
        ("coords", _check_sampler_coords),
    ],
    "lsam": [
        ("input", _check_lsam_input),
        ("params", _check_lsam_params),
    ],
    "heads": [
        ("projection", _check_heads_projection),
        ("classifier", _check_heads_classifier),
        ("classifier-params", _check_heads_classifier_params),
        ("regressor", _check_heads_regressor),
    ],
    "losses": [
        ("focal", _check_loss_focal),
        ("liou", _check_loss_liou),
        ("direction", _check_loss_direction),
        ("attention", _check_loss_attention),
    ],
}


def run_suite(name: str, instances: int = 20, h_step: float = DEFAULT_H,
              seed: int = 0) -> list:
    """Run every check of one suite `instances` times; returns CheckResults."""
    if name not in SUITES:
        raise ValueError(f"unknown suite '{name}'; "
                         f"choose from {sorted(SUITES)}")
    results = []
    for check_name, fn in SUITES[name]:
        for k in range(instances):
            rng = np.random.default_rng(
                (seed, zlib.crc32(name.encode()),
                 zlib.crc32(check_name.encode()), k))
            report = fn(rng, h_step)
            results.append(CheckResult(
                suite=name, check=check_name, instance=k,
                max_rel_err=report.max_rel_err,
                n_checked=report.n_checked,
                passed=report.max_rel_err < DEFAULT_TOL,
            ))
    return results


def run_suites(names, instances: int = 20, h_step: float = DEFAULT_H,
               seed: int = 0) -> list:
    out = []
    for name in names:
        out.extend(run_suite(name, instances, h_step, seed))
    return out
