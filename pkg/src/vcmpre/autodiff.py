"""Minimal reverse-mode automatic differentiation over numpy arrays.

Design rules kept deliberately small and strict:

* ``Tensor`` wraps a float32 ndarray; gradients are float32 arrays of the same
  shape.  Reductions and the convolution kernels accumulate in float64 before
  casting back, which keeps finite-difference checks stable.
* Graphs are define-by-run on an explicit ``Tape``; a tape is built per
  training step and consumed by a single ``backward`` call.
* No implicit broadcasting: elementwise ops require identical shapes, and the
  only mixed-shape op is multiplication/addition by a python scalar constant.
  Shape changes are explicit (``reshape``, ``concat``, ``repeat_axis``, ...).
* With no active tape every op is plain forward evaluation (inference mode).
"""

import numpy as np

from . import kernels

_TAPE_STACK = []


class Tensor:
    """Float32 array node.  ``grad`` is filled by ``backward`` for leaves."""

    __slots__ = ("values", "grad", "requires_grad")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values)

    def detach(self):
        return Tensor(self.values.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.values.shape}{flag})"

    # A little operator sugar; scalars must be python numbers, not arrays.
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, other)

    def __radd__(self, other):
        return add_scalar(self, other)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def constant(values):
    return Tensor(values)


class Tape:
    """Recording of one forward pass; single-use."""

    def __init__(self):
        self._nodes = []
        self._produced = set()
        self._leaves = {}
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted")
        return False

    def __len__(self):
        return len(self._nodes)


def _record(out, inputs, backward_fn):
    """Attach a node to the innermost tape; no-op in inference mode."""
    if not _TAPE_STACK:
        return out
    tape = _TAPE_STACK[-1]
    if not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    tape._nodes.append((out, inputs, backward_fn))
    oid = id(out)
    for t in inputs:
        tid = id(t)
        if t.requires_grad and tid not in tape._produced and tid not in tape._leaves:
            tape._leaves[tid] = t
    tape._produced.add(oid)
    return out


def backward(loss, tape):
    """Backpropagate d(loss)/d(leaf) into ``leaf.grad`` for all tape leaves.

    ``loss`` must be a scalar produced on ``tape``; the tape is consumed.
    Gradients accumulate into pre-existing ``.grad`` buffers.
    """
    if tape._consumed:
        raise RuntimeError("tape already consumed by a previous backward call")
    if loss.values.shape != ():
        raise ValueError(f"loss must be a scalar, got shape {loss.values.shape}")
    if id(loss) not in tape._produced:
        raise RuntimeError("loss tensor was not produced on this tape")
    tape._consumed = True

    # Backward fns may return aliased views of g, so accumulation is
    # out-of-place: stored arrays are never mutated.
    grads = {id(loss): np.ones((), dtype=np.float32)}
    for out, inputs, fn in reversed(tape._nodes):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        contribs = fn(g)
        for t, c in zip(inputs, contribs):
            if c is None or not t.requires_grad:
                continue
            tid = id(t)
            if tid in grads:
                grads[tid] = grads[tid] + c
            else:
                grads[tid] = c
    for tid, leaf in tape._leaves.items():
        g = grads.get(tid)
        if g is None:
            g = np.zeros_like(leaf.values)
        if leaf.grad is None:
            leaf.grad = g.astype(np.float32, copy=False)
        else:
            leaf.grad = leaf.grad + g


def _check_same_shape(a, b, opname):
    if a.values.shape != b.values.shape:
        raise ValueError(
            f"{opname}: shape mismatch {a.values.shape} vs {b.values.shape}"
        )


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b):
    _check_same_shape(a, b, "add")
    out = Tensor(a.values + b.values)
    return _record(out, (a, b), lambda g: (g, g))


def sub(a, b):
    _check_same_shape(a, b, "sub")
    out = Tensor(a.values - b.values)
    return _record(out, (a, b), lambda g: (g, -g))


def mul(a, b):
    _check_same_shape(a, b, "mul")
    out = Tensor(a.values * b.values)
    av, bv = a.values, b.values
    return _record(out, (a, b), lambda g: (g * bv, g * av))


def add_scalar(a, s):
    s = float(s)
    out = Tensor(a.values + np.float32(s))
    return _record(out, (a,), lambda g: (g,))


def scale(a, s):
    s = float(s)
    out = Tensor(a.values * np.float32(s))
    return _record(out, (a,), lambda g: (g * np.float32(s),))


def relu(a):
    out = Tensor(np.maximum(a.values, 0.0))
    mask = a.values > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def sigmoid(a):
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.values))
    out = Tensor(s)
    sv = out.values
    return _record(out, (a,), lambda g: (g * sv * (1.0 - sv),))


def tanh(a):
    out = Tensor(np.tanh(a.values))
    tv = out.values
    return _record(out, (a,), lambda g: (g * (1.0 - tv * tv),))


def softplus(a):
    out = Tensor(np.logaddexp(np.float32(0.0), a.values))
    av = a.values
    with np.errstate(over="ignore"):
        sig = (1.0 / (1.0 + np.exp(-av))).astype(np.float32)
    return _record(out, (a,), lambda g: (g * sig,))


def exp(a):
    out = Tensor(np.exp(a.values))
    ev = out.values
    return _record(out, (a,), lambda g: (g * ev,))


def log(a):
    if not np.all(a.values > 0.0):
        raise ValueError("log: input must be strictly positive")
    out = Tensor(np.log(a.values))
    av = a.values
    return _record(out, (a,), lambda g: (g / av,))


def absval(a):
    out = Tensor(np.abs(a.values))
    sign = np.sign(a.values).astype(np.float32)
    return _record(out, (a,), lambda g: (g * sign,))


def clamp01(a):
    """Clip to [0, 1]; gradient passes through inside the closed interval."""
    out = Tensor(np.clip(a.values, 0.0, 1.0))
    mask = (a.values >= 0.0) & (a.values <= 1.0)
    return _record(out, (a,), lambda g: (g * mask,))


def clamp_min(a, bound):
    bound = float(bound)
    out = Tensor(np.maximum(a.values, np.float32(bound)))
    mask = a.values >= bound
    return _record(out, (a,), lambda g: (g * mask,))


def ste_round(a):
    """Round to nearest integer (ties to even); gradient is identity."""
    out = Tensor(np.rint(a.values))
    return _record(out, (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# reductions (float64 accumulation)
# ---------------------------------------------------------------------------


def sum_all(a):
    out = Tensor(np.float32(np.sum(a.values, dtype=np.float64)))
    shape = a.values.shape
    return _record(out, (a,), lambda g: (np.full(shape, g, dtype=np.float32),))


def mean_all(a):
    n = a.values.size
    out = Tensor(np.float32(np.sum(a.values, dtype=np.float64) / n))
    shape = a.values.shape
    return _record(
        out, (a,), lambda g: (np.full(shape, g / np.float32(n), dtype=np.float32),)
    )


def sum_axes(a, axes):
    axes = tuple(int(ax) for ax in axes)
    out = Tensor(np.sum(a.values, axis=axes, dtype=np.float64).astype(np.float32))
    shape = a.values.shape

    def bwd(g):
        ge = np.expand_dims(g, axes)
        return (np.broadcast_to(ge, shape).astype(np.float32),)

    return _record(out, (a,), bwd)


def mean_axes(a, axes):
    axes = tuple(int(ax) for ax in axes)
    count = int(np.prod([a.values.shape[ax] for ax in axes]))
    out = Tensor(
        (np.sum(a.values, axis=axes, dtype=np.float64) / count).astype(np.float32)
    )
    shape = a.values.shape

    def bwd(g):
        ge = np.expand_dims(g / np.float32(count), axes)
        return (np.broadcast_to(ge, shape).astype(np.float32),)

    return _record(out, (a,), bwd)


def mse(a, b):
    """Mean squared error, accumulated in float64."""
    _check_same_shape(a, b, "mse")
    d64 = a.values.astype(np.float64) - b.values.astype(np.float64)
    out = Tensor(np.float32(np.mean(d64 * d64)))
    diff = (a.values - b.values).astype(np.float32)
    n = a.values.size

    def bwd(g):
        gd = (np.float32(2.0) * g / np.float32(n)) * diff
        return gd, -gd

    return _record(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    out = Tensor(a.values.reshape(shape))
    old = a.values.shape
    return _record(out, (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis):
    tensors = tuple(tensors)
    if not tensors:
        raise ValueError("concat: need at least one tensor")
    axis = int(axis)
    out = Tensor(np.concatenate([t.values for t in tensors], axis=axis))
    sizes = [t.values.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(pieces)

    return _record(out, tensors, bwd)


def slice_nd(a, starts, sizes):
    """Rectangular slice: starts/sizes per axis (full-rank)."""
    if len(starts) != a.values.ndim or len(sizes) != a.values.ndim:
        raise ValueError("slice_nd: starts/sizes must cover every axis")
    sl = tuple(slice(int(s), int(s) + int(n)) for s, n in zip(starts, sizes))
    for axis, s in enumerate(sl):
        if s.start < 0 or s.stop > a.values.shape[axis]:
            raise ValueError(
                f"slice_nd: slice {s} out of bounds for axis {axis} "
                f"of shape {a.values.shape}"
            )
    out = Tensor(np.ascontiguousarray(a.values[sl]))
    shape = a.values.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=np.float32)
        gx[sl] = g
        return (gx,)

    return _record(out, (a,), bwd)


def repeat_axis(a, axis, reps):
    """Repeat a size-1 axis ``reps`` times (explicit broadcast)."""
    axis = int(axis)
    reps = int(reps)
    if a.values.shape[axis] != 1:
        raise ValueError(
            f"repeat_axis: axis {axis} must have size 1, got shape {a.values.shape}"
        )
    out = Tensor(np.repeat(a.values, reps, axis=axis))
    return _record(
        out,
        (a,),
        lambda g: (g.sum(axis=axis, keepdims=True, dtype=np.float64).astype(np.float32),),
    )


def take_index(a, index):
    """a is 1-D; returns the scalar a[index]."""
    if a.values.ndim != 1:
        raise ValueError("take_index: input must be 1-D")
    index = int(index)
    out = Tensor(a.values[index])
    n = a.values.shape[0]

    def bwd(g):
        gx = np.zeros(n, dtype=np.float32)
        gx[index] = g
        return (gx,)

    return _record(out, (a,), bwd)


def take_per_row(a, indices):
    """a is (B, K); returns (B,) with a[i, indices[i]]."""
    if a.values.ndim != 2:
        raise ValueError("take_per_row: input must be 2-D")
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(a.values.shape[0])
    out = Tensor(a.values[rows, idx])
    shape = a.values.shape

    def bwd(g):
        gx = np.zeros(shape, dtype=np.float32)
        gx[rows, idx] = g
        return (gx,)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# neural-net ops (kernel-backed)
# ---------------------------------------------------------------------------


def conv2d(x, w, b):
    """Same-size 2-D convolution; x (C,H,W) or (N,C,H,W), w (O,C,k,k), b (O,)."""
    squeeze = x.values.ndim == 3
    xv = x.values[None] if squeeze else x.values
    if xv.ndim != 4:
        raise ValueError(f"conv2d: input must be 3-D or 4-D, got {x.values.shape}")
    o, c, k, k2 = w.values.shape
    if k != k2 or k % 2 == 0:
        raise ValueError(f"conv2d: kernel must be odd square, got {w.values.shape}")
    if xv.shape[1] != c:
        raise ValueError(
            f"conv2d: input has {xv.shape[1]} channels, kernel expects {c}"
        )
    if b.values.shape != (o,):
        raise ValueError(f"conv2d: bias shape {b.values.shape} != ({o},)")
    # When recording, let the backend stash forward work products (im2col
    # columns) so the weight gradient can reuse them.
    cache = {} if _TAPE_STACK and (x.requires_grad or w.requires_grad) else None
    y = kernels.conv2d_forward(xv, w.values, b.values, cache=cache)
    out = Tensor(y[0] if squeeze else y)

    def bwd(g):
        g4 = g[None] if squeeze else g
        need_gx = x.requires_grad
        gx, gw, gb = kernels.conv2d_backward(
            xv, w.values, g4, need_gx, w.requires_grad, cache=cache
        )
        if gx is not None and squeeze:
            gx = gx[0]
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


def conv_temporal(x, w, b=None):
    """1-D convolution along the frame axis; x (T,C,H,W) or (B,T,C,H,W), w (O,C,kt)."""
    squeeze = x.values.ndim == 4
    xv = x.values[None] if squeeze else x.values
    if xv.ndim != 5:
        raise ValueError(
            f"conv_temporal: input must be 4-D or 5-D, got {x.values.shape}"
        )
    o, c, kt = w.values.shape
    if kt % 2 == 0:
        raise ValueError(f"conv_temporal: kernel length must be odd, got {kt}")
    if kt > xv.shape[1]:
        raise ValueError(
            f"conv_temporal: kernel length {kt} exceeds {xv.shape[1]} frames"
        )
    if xv.shape[2] != c:
        raise ValueError(
            f"conv_temporal: input has {xv.shape[2]} channels, kernel expects {c}"
        )
    if b is not None and b.values.shape != (o,):
        raise ValueError(f"conv_temporal: bias shape {b.values.shape} != ({o},)")
    cache = {} if _TAPE_STACK and (x.requires_grad or w.requires_grad) else None
    y = kernels.convt_forward(xv, w.values, None if b is None else b.values, cache=cache)
    out = Tensor(y[0] if squeeze else y)
    inputs = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g5 = g[None] if squeeze else g
        gx, gw, gb = kernels.convt_backward(
            xv, w.values, g5, x.requires_grad, w.requires_grad, cache=cache
        )
        if gx is not None and squeeze:
            gx = gx[0]
        if b is None:
            return gx, gw
        return gx, gw, gb

    return _record(out, inputs, bwd)


def avg_pool2x2(x):
    """2x2 average pooling, stride 2; x (...,C,H,W) with even H, W."""
    h, w = x.values.shape[-2], x.values.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2x2: H and W must be even, got {x.values.shape}")
    v = x.values
    lead = v.shape[:-2]
    r = v.reshape(lead + (h // 2, 2, w // 2, 2))
    out = Tensor(
        (r.astype(np.float64).mean(axis=(-3, -1))).astype(np.float32)
    )

    def bwd(g):
        ge = g[..., :, None, :, None] * np.float32(0.25)
        gx = np.broadcast_to(ge, lead + (h // 2, 2, w // 2, 2)).reshape(v.shape)
        return (np.ascontiguousarray(gx),)

    return _record(out, (x,), bwd)


def batch_matmul(a, b):
    """Per-batch matmul: a (B,M,K) @ b (B,K,N) -> (B,M,N), float64 inside."""
    if a.values.ndim != 3 or b.values.ndim != 3:
        raise ValueError("batch_matmul: inputs must be 3-D")
    if a.values.shape[0] != b.values.shape[0] or a.values.shape[2] != b.values.shape[1]:
        raise ValueError(
            f"batch_matmul: shape mismatch {a.values.shape} @ {b.values.shape}"
        )
    a64 = a.values.astype(np.float64)
    b64 = b.values.astype(np.float64)
    out = Tensor((a64 @ b64).astype(np.float32))

    def bwd(g):
        g64 = g.astype(np.float64)
        ga = (g64 @ b64.transpose(0, 2, 1)).astype(np.float32)
        gb = (a64.transpose(0, 2, 1) @ g64).astype(np.float32)
        return ga, gb

    return _record(out, (a, b), bwd)


def linear(x, w, b):
    """Affine map; x (C,) or (B,C), w (O,C), b (O,)."""
    squeeze = x.values.ndim == 1
    xv = x.values[None] if squeeze else x.values
    if xv.ndim != 2 or xv.shape[1] != w.values.shape[1]:
        raise ValueError(
            f"linear: input {x.values.shape} incompatible with weight {w.values.shape}"
        )
    y64 = xv.astype(np.float64) @ w.values.astype(np.float64).T
    y64 += b.values.astype(np.float64)
    y = y64.astype(np.float32)
    out = Tensor(y[0] if squeeze else y)
    wv = w.values

    def bwd(g):
        g2 = g[None] if squeeze else g
        gx = (g2.astype(np.float64) @ wv.astype(np.float64)).astype(np.float32)
        gw = (g2.astype(np.float64).T @ xv.astype(np.float64)).astype(np.float32)
        gb = g2.sum(axis=0, dtype=np.float64).astype(np.float32)
        if squeeze:
            gx = gx[0]
        return gx, gw, gb

    return _record(out, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# blockwise 8x8 DCT (orthonormal, so the adjoint equals the inverse)
# ---------------------------------------------------------------------------


def _check_dct_shape(a):
    if a.values.ndim < 2 or a.values.shape[-2] % 8 or a.values.shape[-1] % 8:
        raise ValueError(
            f"block DCT needs trailing dims divisible by 8, got {a.values.shape}"
        )


def block_dct8(a):
    _check_dct_shape(a)
    out = Tensor(kernels.dct8_apply(a.values, inverse=False))
    return _record(out, (a,), lambda g: (kernels.dct8_apply(g, inverse=True),))


def block_idct8(a):
    _check_dct_shape(a)
    out = Tensor(kernels.dct8_apply(a.values, inverse=True))
    return _record(out, (a,), lambda g: (kernels.dct8_apply(g, inverse=False),))


def coeff_channels(a):
    """Regroup (H, W) of 8x8 blocks into (64, n_blocks): one row per in-block
    coefficient position, scanning blocks in raster order."""
    if a.values.ndim != 2 or a.values.shape[0] % 8 or a.values.shape[1] % 8:
        raise ValueError(f"coeff_channels: need 2-D multiple-of-8, got {a.values.shape}")
    h, w = a.values.shape
    hb, wb = h // 8, w // 8
    v = a.values.reshape(hb, 8, wb, 8).transpose(1, 3, 0, 2).reshape(64, hb * wb)
    out = Tensor(np.ascontiguousarray(v))

    def bwd(g):
        gx = (
            g.reshape(8, 8, hb, wb)
            .transpose(2, 0, 3, 1)
            .reshape(h, w)
        )
        return (np.ascontiguousarray(gx),)

    return _record(out, (a,), bwd)
