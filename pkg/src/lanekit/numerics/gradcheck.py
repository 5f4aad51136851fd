"""Central-difference verification of analytic gradients.

Checks run in 64-bit regardless of how the model trains. The default stencil
is the 4th-order five-point central difference, whose combined truncation and
roundoff error (~1e-13 relative to the function scale at h=1e-3) keeps the
oracle well below the 1e-6 tolerance even for small gradient components. A
coordinate whose left and right one-sided differences disagree badly sits on
a kink (clamp boundary, abs at zero, ...) and is reported as skipped instead
of failed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, gradients, parameter, _toposort


class NonFiniteError(ArithmeticError):
    """An intermediate node produced NaN or infinity."""


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    n_checked: int
    skipped: list = field(default_factory=list)  # flat indices on kinks
    rel_err: np.ndarray | None = None

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_err < self.tol

    def __str__(self):
        state = "PASS" if self.passed else "FAIL"
        extra = f", {len(self.skipped)} kink coordinate(s) skipped" if self.skipped else ""
        return (f"grad check {state}: max rel err {self.max_rel_err:.3e} "
                f"(tol {self.tol:.1e}, {self.n_checked} coords{extra})")


def _check_finite(root: Tensor):
    for node in _toposort(root):
        if not np.isfinite(node.data).all():
            raise NonFiniteError(
                f"non-finite values in node '{node._op}' "
                f"(shape {node.data.shape})")


def grad_check(f, point: np.ndarray, tol: float = 1e-6, h: float = 1e-3,
               kink_tol: float = 1e-2) -> GradCheckReport:
    """Compare d f(x) / dx against central differences at `point`.

    `f` maps a Tensor to a scalar Tensor and is re-invoked for every
    perturbed evaluation, so it must be a pure function of its argument.
    The five-point stencil samples x ± h and x ± 2h per coordinate.
    """
    x0 = np.asarray(point, dtype=np.float64)
    p = parameter(x0.copy(), "gradcheck_point")
    y = f(p)
    if y.size != 1:
        raise ValueError(f"grad_check: f must be scalar, got shape {y.shape}")
    _check_finite(y)
    analytic = gradients(y, [p])[p].reshape(-1)

    flat = x0.reshape(-1)
    n = flat.size
    f0 = float(y.data.reshape(-1)[0])

    def eval_at(vec):
        out = f(Tensor(vec.reshape(x0.shape)))
        return float(out.data.reshape(-1)[0])

    rel = np.full(n, np.nan)
    skipped = []
    for i in range(n):
        bump = np.zeros(n)
        bump[i] = h
        fp1 = eval_at(flat + bump)
        fm1 = eval_at(flat - bump)
        fp2 = eval_at(flat + 2 * bump)
        fm2 = eval_at(flat - 2 * bump)
        # One-sided slopes over the full stencil span flag any kink that a
        # sample point might straddle.
        left = (f0 - fm2) / (2 * h)
        right = (fp2 - f0) / (2 * h)
        scale = max(1.0, abs(left), abs(right))
        if abs(left - right) > kink_tol * scale:
            skipped.append(i)
            continue
        fd = (-fp2 + 8 * fp1 - 8 * fm1 + fm2) / (12.0 * h)
        # The denominator floor tracks the function scale: where the true
        # gradient is exactly zero, fd is pure roundoff (~1e-13 * |f|), and
        # dividing by an absolute constant would report noise as error.
        floor = 1e-6 * max(1.0, abs(f0))
        rel[i] = abs(fd - analytic[i]) / max(abs(fd), abs(analytic[i]), floor)

    checked = ~np.isnan(rel)
    max_err = float(rel[checked].max()) if checked.any() else float("inf")
    return GradCheckReport(max_rel_err=max_err, tol=tol,
                           n_checked=int(checked.sum()),
                           skipped=skipped, rel_err=rel)
