"""Dense arrays with reverse-mode automatic differentiation.

Values are plain numpy arrays (float32 for training, float64 for gradient
checking). Every operation builds an expression node eagerly: the forward
value is computed and cached at construction time, and each node keeps a
vector-Jacobian-product closure for the backward pass. Graphs are acyclic
and single-threaded; the backward pass visits each node exactly once in
reverse topological order.

Only the operations the lane detector needs are provided: elementwise
arithmetic with numpy-style broadcasting, matrix products (with batched
leading dimensions), 2-D convolution (1x1/3x3 kernels, stride 1 or 2,
zero padding), softmax/log-softmax, exp/log/tan/abs/clamp, reductions,
concatenation, gather and basic slicing.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "tensor",
    "parameter",
    "evaluate",
    "gradients",
    "concat",
    "gather",
    "minimum",
    "maximum",
    "conv2d",
    "bilinear_sample",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an operation."""


def _as_array(x, dtype=None) -> np.ndarray:
    a = np.asarray(x, dtype=dtype)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    return a


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    """One node of the expression graph: cached value plus backward closure."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad=False, name=None,
                 _parents=(), _vjp=None, _op="leaf"):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._vjp = _vjp
        self._op = _op

    # ------------------------------------------------------------------
    # basic introspection
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return (f"Tensor(op={self._op}, shape={self.data.shape}, "
                f"dtype={self.data.dtype}, requires_grad={self.requires_grad})")

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, _op="detach")

    # ------------------------------------------------------------------
    # arithmetic
    # ------------------------------------------------------------------
    def __add__(self, other):
        if np.isscalar(other):
            return _node(self.data + other, (self,),
                         lambda g: (g,), "add_scalar")
        return _binary("add", self, other, np.add,
                       lambda g, a, b: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return _node(self.data - other, (self,),
                         lambda g: (g,), "sub_scalar")
        return _binary("sub", self, other, np.subtract,
                       lambda g, a, b: (g, -g))

    def __rsub__(self, other):
        return _node(other - self.data, (self,), lambda g: (-g,), "rsub")

    def __mul__(self, other):
        if np.isscalar(other):
            c = other
            return _node(self.data * c, (self,),
                         lambda g: (g * c,), "mul_scalar")
        return _binary("mul", self, other, np.multiply,
                       lambda g, a, b: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            c = other
            return _node(self.data / c, (self,),
                         lambda g: (g / c,), "div_scalar")
        return _binary("div", self, other, np.divide,
                       lambda g, a, b: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        c, a = other, self.data
        return _node(c / a, (self,),
                     lambda g: (-g * c / (a * a),), "rdiv")

    def __neg__(self):
        return _node(-self.data, (self,), lambda g: (-g,), "neg")

    def __pow__(self, p):
        if not np.isscalar(p):
            raise ShapeError("pow: only scalar exponents are supported")
        a = self.data
        return _node(a ** p, (self,),
                     lambda g: (g * p * a ** (p - 1),), "pow")

    def __matmul__(self, other):
        other = _wrap(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(
                f"matmul: operands must be at least 2-D, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(
                f"matmul: incompatible shapes {a.shape} @ {b.shape}")
        try:
            out = a @ b
        except ValueError as e:  # mismatched batch dims
            raise ShapeError(
                f"matmul: incompatible shapes {a.shape} @ {b.shape}") from e

        def vjp(g):
            ga = _sum_to_shape(g @ b.swapaxes(-1, -2), a.shape)
            gb = _sum_to_shape(a.swapaxes(-1, -2) @ g, b.shape)
            return ga, gb

        return _node(out, (self, other), vjp, "matmul")

    # ------------------------------------------------------------------
    # shape manipulation
    # ------------------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self.data
        return _node(a.reshape(shape), (self,),
                     lambda g: (g.reshape(a.shape),), "reshape")

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)
        return _node(self.data.transpose(axes), (self,),
                     lambda g: (g.transpose(inv),), "transpose")

    def swapaxes(self, a, b):
        return _node(self.data.swapaxes(a, b), (self,),
                     lambda g: (g.swapaxes(a, b),), "swapaxes")

    def __getitem__(self, key):
        a = self.data
        out = a[key]
        # Basic keys (ints/slices/ellipsis) never alias an element twice,
        # so the backward scatter can assign instead of accumulating.
        parts = key if isinstance(key, tuple) else (key,)
        basic = all(isinstance(p, (int, np.integer, slice))
                    or p is Ellipsis or p is None for p in parts)

        def vjp(g):
            ga = np.zeros_like(a)
            if basic:
                ga[key] = g
            else:
                np.add.at(ga, key, g)
            return (ga,)

        return _node(out, (self,), vjp, "slice")

    # ------------------------------------------------------------------
    # reductions
    # ------------------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        a = self.data
        out = a.sum(axis=axis, keepdims=keepdims)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.shape).copy(),)
            g2 = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(g2, a.shape).copy(),)

        return _node(out, (self,), vjp, "sum")

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    # ------------------------------------------------------------------
    # elementwise nonlinearities
    # ------------------------------------------------------------------
    def exp(self):
        y = np.exp(self.data)
        return _node(y, (self,), lambda g: (g * y,), "exp")

    def log(self):
        a = self.data
        return _node(np.log(a), (self,), lambda g: (g / a,), "log")

    def sqrt(self):
        y = np.sqrt(self.data)
        return _node(y, (self,), lambda g: (g * 0.5 / y,), "sqrt")

    def tan(self):
        y = np.tan(self.data)
        return _node(y, (self,), lambda g: (g * (1.0 + y * y),), "tan")

    def abs(self):
        a = self.data
        return _node(np.abs(a), (self,), lambda g: (g * np.sign(a),), "abs")

    def clamp(self, lo=None, hi=None):
        a = self.data
        out = np.clip(a, lo, hi)
        inside = np.ones_like(a, dtype=bool)
        if lo is not None:
            inside &= a >= lo
        if hi is not None:
            inside &= a <= hi
        return _node(out, (self,), lambda g: (g * inside,), "clamp")

    def relu(self):
        a = self.data
        mask = a > 0
        return _node(a * mask, (self,), lambda g: (g * mask,), "relu")

    def sigmoid(self):
        a = self.data
        y = np.empty_like(a)
        pos = a >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        y[~pos] = ea / (1.0 + ea)
        return _node(y, (self,), lambda g: (g * y * (1.0 - y),), "sigmoid")

    def softmax(self, axis=-1):
        a = self.data
        m = a.max(axis=axis, keepdims=True)
        e = np.exp(a - m)
        y = e / e.sum(axis=axis, keepdims=True)

        def vjp(g):
            dot = (g * y).sum(axis=axis, keepdims=True)
            return (y * (g - dot),)

        return _node(y, (self,), vjp, "softmax")

    def log_softmax(self, axis=-1):
        a = self.data
        m = a.max(axis=axis, keepdims=True)
        s = a - m
        ls = s - np.log(np.exp(s).sum(axis=axis, keepdims=True))

        def vjp(g):
            return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

        return _node(ls, (self,), vjp, "log_softmax")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, vjp, op) -> Tensor:
    t = Tensor(data, _parents=parents, _vjp=vjp, _op=op)
    if not t.requires_grad:
        t._parents, t._vjp = (), None  # prune constant subgraphs
    return t


def _binary(op, a, b, fwd, bwd) -> Tensor:
    b = _wrap(b)
    try:
        out = fwd(a.data, b.data)
    except ValueError as e:
        raise ShapeError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} "
            f"are not broadcast-compatible") from e
    ad, bd = a.data, b.data

    def vjp(g):
        ga, gb = bwd(g, ad, bd)
        return _sum_to_shape(ga, ad.shape), _sum_to_shape(gb, bd.shape)

    return _node(out, (a, b), vjp, op)


# ----------------------------------------------------------------------
# free functions
# ----------------------------------------------------------------------

def tensor(data, dtype=None) -> Tensor:
    """Constant (non-trainable) tensor."""
    return Tensor(_as_array(data, dtype))


def parameter(data, name: str, dtype=None) -> Tensor:
    """Trainable leaf; the name shows up in optimizer errors and checkpoints."""
    return Tensor(_as_array(data, dtype), requires_grad=True, name=name)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; gradient splits evenly on exact ties."""
    def bwd(g, ad, bd):
        wa = np.where(ad < bd, 1.0, np.where(ad == bd, 0.5, 0.0))
        return g * wa, g * (1.0 - wa)
    return _binary("minimum", _wrap(a), b, np.minimum, bwd)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g, ad, bd):
        wa = np.where(ad > bd, 1.0, np.where(ad == bd, 0.5, 0.0))
        return g * wa, g * (1.0 - wa)
    return _binary("maximum", _wrap(a), b, np.maximum, bwd)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError as e:
        raise ShapeError(
            f"concat: incompatible shapes {[d.shape for d in datas]} "
            f"along axis {axis}") from e
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(out, tuple(tensors), vjp, "concat")


def gather(x: Tensor, indices, axis=0) -> Tensor:
    """Index-select along one axis; backward scatter-adds."""
    idx = np.asarray(indices)
    a = x.data
    out = np.take(a, idx, axis=axis)

    def vjp(g):
        ga = np.zeros_like(a)
        key = (slice(None),) * axis + (idx,)
        np.add.at(ga, key, g)
        return (ga,)

    return _node(out, (x,), vjp, "gather")


# ----------------------------------------------------------------------
# 2-D convolution (NCHW, zero padding keeping k//2 border, stride 1 or 2)
# ----------------------------------------------------------------------

_COL2IM_CACHE: dict = {}


def _col_indices(n, c, h, w, kh, kw, stride):
    key = (n, c, h, w, kh, kw, stride)
    hit = _COL2IM_CACHE.get(key)
    if hit is not None:
        return hit
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, w + 2 * pw
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    ni = np.arange(n)[:, None, None, None, None, None]
    ci = np.arange(c)[None, None, None, :, None, None]
    yi = (np.arange(oh) * stride)[None, :, None, None, None, None] + \
        np.arange(kh)[None, None, None, None, :, None]
    xi = (np.arange(ow) * stride)[None, None, :, None, None, None] + \
        np.arange(kw)[None, None, None, None, None, :]
    flat = ((ni * c + ci) * hp + yi) * wp + xi
    flat = np.ascontiguousarray(
        np.broadcast_to(flat, (n, oh, ow, c, kh, kw)).reshape(-1))
    _COL2IM_CACHE[key] = (flat, (n, c, hp, wp), oh, ow)
    return _COL2IM_CACHE[key]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Zero-padded 2-D convolution: x (N,C,H,W), w (F,C,kh,kw) -> (N,F,OH,OW).

    Padding is k//2 per side, so stride 1 preserves the grid and stride 2
    halves it (rounding up). Kernels beyond 3x3 or strides beyond 2 are out
    of scope for the tiny backbone and rejected.
    """
    x, w = _wrap(x), _wrap(w)
    xd, wd = x.data, w.data
    if xd.ndim != 4 or wd.ndim != 4:
        raise ShapeError(f"conv2d: need 4-D operands, got {xd.shape} and {wd.shape}")
    n, c, h, wid = xd.shape
    f, c2, kh, kw = wd.shape
    if c != c2:
        raise ShapeError(
            f"conv2d: input channels {c} do not match kernel channels {c2} "
            f"(shapes {xd.shape}, {wd.shape})")
    if kh not in (1, 3) or kw not in (1, 3) or stride not in (1, 2):
        raise ShapeError(
            f"conv2d: unsupported kernel {kh}x{kw} / stride {stride}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    wm = wd.reshape(f, -1)
    out = cols @ wm.T
    if b is not None:
        b = _wrap(b)
        out = out + b.data
    out = out.reshape(n, oh, ow, f).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * oh * ow, f)
        grad_w = (g2.T @ cols).reshape(wd.shape)
        grad_cols = g2 @ wm
        flat, pad_shape, _, _ = _col_indices(n, c, h, wid, kh, kw, stride)
        acc = np.bincount(flat, weights=grad_cols.reshape(-1).astype(np.float64),
                          minlength=int(np.prod(pad_shape)))
        gx = acc.reshape(pad_shape)[:, :, ph:ph + h, pw:pw + wid].astype(xd.dtype)
        grads = [gx, grad_w]
        if b is not None:
            grads.append(g2.sum(axis=0))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return _node(out, parents, vjp, "conv2d")


def bilinear_sample(grid: Tensor, xs: Tensor, ys: Tensor) -> Tensor:
    """Sample grid (C,Hg,Wg) at fractional cell coordinates xs, ys (P,) -> (P,C).

    Corners outside the grid contribute zero (zero padding), so points far
    outside produce a zero vector. Differentiable in the grid values and in
    both coordinate arrays.
    """
    grid, xs, ys = _wrap(grid), _wrap(xs), _wrap(ys)
    gd = grid.data
    if gd.ndim != 3:
        raise ShapeError(f"bilinear_sample: grid must be 3-D, got {gd.shape}")
    c, hg, wg = gd.shape
    xv, yv = xs.data, ys.data
    x0 = np.floor(xv)
    y0 = np.floor(yv)
    fx = xv - x0
    fy = yv - y0
    x0i, y0i = x0.astype(np.int64), y0.astype(np.int64)

    corners = []  # (weight, ddx, ddy, values, xi_ok, yi_ok, xi, yi)
    for dy, wy, dwy in ((0, 1.0 - fy, -1.0), (1, fy, 1.0)):
        for dx, wx, dwx in ((0, 1.0 - fx, -1.0), (1, fx, 1.0)):
            xi = x0i + dx
            yi = y0i + dy
            ok = (xi >= 0) & (xi < wg) & (yi >= 0) & (yi < hg)
            xc = np.clip(xi, 0, wg - 1)
            yc = np.clip(yi, 0, hg - 1)
            vals = gd[:, yc, xc].T * ok[:, None]  # (P, C)
            corners.append((wx * wy, dwx * wy, wx * dwy, vals, ok, xc, yc))

    out = np.zeros((xv.size, c), dtype=gd.dtype)
    for wgt, _, _, vals, _, _, _ in corners:
        out += wgt[:, None] * vals

    def vjp(g):
        gx = np.zeros_like(xv, dtype=np.float64)
        gy = np.zeros_like(yv, dtype=np.float64)
        # Scatter through one bincount per corner: cell-major flat indices
        # (cell * c + channel) make the per-channel accumulation a single
        # histogram, which is much faster than np.add.at row updates.
        chan = np.arange(c)
        acc = np.zeros(hg * wg * c, dtype=np.float64)
        for wgt, dwx, dwy, vals, ok, xc, yc in corners:
            contrib = (g * vals).sum(axis=1)
            gx += dwx * contrib
            gy += dwy * contrib
            flat = ((yc * wg + xc) * c)[:, None] + chan
            weights = (g * (wgt * ok)[:, None]).astype(np.float64)
            acc += np.bincount(flat.reshape(-1), weights=weights.reshape(-1),
                               minlength=acc.size)
        ggrid = acc.reshape(hg * wg, c).T.reshape(gd.shape).astype(gd.dtype)
        return ggrid, gx.astype(xv.dtype), gy.astype(yv.dtype)

    return _node(out, (grid, xs, ys), vjp, "bilinear_sample")


# ----------------------------------------------------------------------
# evaluation / differentiation
# ----------------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order  # inputs appear before their consumers


def evaluate(root: Tensor) -> np.ndarray:
    """Forward value of the graph. Values are cached eagerly at construction,
    so this simply returns the root's array."""
    return root.data


def gradients(root: Tensor, params) -> dict:
    """d(root)/d(param) for each requested parameter.

    The root must be scalar-valued. Leaves that are not requested accumulate
    nothing; parameters the root does not depend on get zero gradients.
    """
    if root.size != 1:
        raise ShapeError(
            f"gradients: root must be scalar, got shape {root.shape}")
    params = list(params)
    wanted = {id(p) for p in params}
    order = _toposort(root)

    needed: dict[int, bool] = {}
    for node in order:
        needed[id(node)] = id(node) in wanted or any(
            needed[id(p)] for p in node._parents)

    acc: dict[int, np.ndarray] = {
        id(root): np.ones_like(root.data)} if needed[id(root)] else {}
    for node in reversed(order):
        g = acc.pop(id(node), None)
        if g is None:
            continue
        if id(node) in wanted:
            acc[id(node)] = g  # keep param grads; params may also be interior
            if node._vjp is None:
                continue
            g = acc[id(node)]
        if node._vjp is None:
            continue
        for p, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not needed.get(id(p), False):
                continue
            if id(p) in acc:
                acc[id(p)] = acc[id(p)] + pg
            else:
                acc[id(p)] = pg

    return {p: acc.get(id(p), np.zeros_like(p.data)) for p in params}
