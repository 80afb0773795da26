"""Differentiable virtual codec: block prediction, 8x8 DCT coding of the
residual, uniform quantization, and a learned factorized entropy model.

The encoder mirrors a classical hybrid coder, but every value-producing step
is an autodiff op, so the estimated rate and the distortion are
differentiable with respect to the input clip and the entropy-model
parameters.  Mode decisions and motion vectors are picked by SAD on detached
values: they are side information, and gradients flow only through the chosen
prediction path.

Residuals are scaled to 8-bit units (x255) before the transform so quantizer
step sizes line up with integer-pixel conventions: ``step(f_q) = 2**((f_q -
4) / 6)``, i.e. step 1.0 at f_q=4, doubling every 6 increments.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels, optim


@dataclass(frozen=True)
class VirtualCodecConfig:
    pred_block: int = 16       # prediction / motion block
    transform_block: int = 8   # residual DCT block
    search_range: int = 7      # integer-pel motion search radius
    pixel_scale: float = 255.0 # residual units fed to the transform
    min_prob: float = 2.0 ** -20

    def __post_init__(self):
        if self.pred_block % self.transform_block:
            raise ValueError("pred_block must be a multiple of transform_block")
        if self.transform_block != 8:
            raise ValueError("transform is fixed at 8x8")


DEFAULT_CONFIG = VirtualCodecConfig()


def quant_step(f_q):
    """Quantizer step for a quality index: 1.0 at f_q=4, doubling every 6."""
    return 2.0 ** ((float(f_q) - 4.0) / 6.0)


def quantize(coeffs, step, mode="round", rng=None):
    """Quantize transform coefficients to step units.

    ``round`` uses straight-through rounding (exact forward, identity
    backward); ``noise`` substitutes additive uniform noise on [-0.5, 0.5),
    the training-time relaxation, drawn once from ``rng``.
    """
    step = float(step)
    scaled = ad.scale(coeffs, 1.0 / step)
    if mode == "round":
        return ad.ste_round(scaled)
    if mode == "noise":
        if rng is None:
            raise ValueError("quantize: noise mode needs an rng")
        noise = rng.uniform(-0.5, 0.5, size=coeffs.shape).astype(np.float32)
        return ad.add(scaled, ad.constant(noise))
    raise ValueError(f"quantize: unknown mode {mode!r}")


def dequantize(q, step):
    return ad.scale(q, float(step))


# ---------------------------------------------------------------------------
# factorized entropy model
# ---------------------------------------------------------------------------


@dataclass
class EntropyModelParams:
    """Per-channel factorized CDF, widths 1->3->3->3->1.

    Matrices pass through softplus and the gate factors through tanh, so the
    modelled CDF is strictly increasing in its input for any parameter
    values.
    """

    matrices: tuple
    biases: tuple
    gates: tuple

    @property
    def channels(self):
        return self.matrices[0].shape[0]

    def named(self):
        for i, t in enumerate(self.matrices):
            yield f"entropy.matrix{i}", t
        for i, t in enumerate(self.biases):
            yield f"entropy.bias{i}", t
        for i, t in enumerate(self.gates):
            yield f"entropy.gate{i}", t

    def tensors(self):
        return [t for _, t in self.named()]

    def set_trainable(self, flag):
        for t in self.tensors():
            t.requires_grad = bool(flag)


_WIDTHS = (1, 3, 3, 3, 1)


def init_entropy_model(channels=64, seed=0):
    """Fresh parameters whose CDF starts out close to a unit-scale logistic.

    Matrix entries start at softplus^-1(1/fan_out) so the composed slope is
    ~1; biases get a small uniform jitter to break symmetry; gates start at
    zero (identity skip).
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x454D)))
    matrices, biases, gates = [], [], []
    for i in range(len(_WIDTHS) - 1):
        in_w, out_w = _WIDTHS[i], _WIDTHS[i + 1]
        winit = math.log(math.expm1(1.0 / out_w))
        matrices.append(
            ad.Tensor(np.full((channels, out_w, in_w), winit, np.float32),
                      requires_grad=True)
        )
        biases.append(
            ad.Tensor(rng.uniform(-0.5, 0.5, (channels, out_w)).astype(np.float32),
                      requires_grad=True)
        )
        if i < len(_WIDTHS) - 2:
            gates.append(
                ad.Tensor(np.zeros((channels, out_w), np.float32), requires_grad=True)
            )
    return EntropyModelParams(tuple(matrices), tuple(biases), tuple(gates))


def entropy_cdf(params, x):
    """Evaluate the per-channel CDF at ``x`` (C, N), in quantized units."""
    if x.ndim != 2 or x.shape[0] != params.channels:
        raise ValueError(
            f"entropy_cdf: expected ({params.channels}, N), got {x.shape}"
        )
    c, n = x.shape
    h = ad.reshape(x, (c, 1, n))
    last = len(params.matrices) - 1
    for i, m in enumerate(params.matrices):
        o = m.shape[1]
        h = ad.batch_matmul(ad.softplus(m), h)
        b = ad.repeat_axis(ad.reshape(params.biases[i], (c, o, 1)), 2, n)
        h = ad.add(h, b)
        if i < last:
            g = ad.repeat_axis(
                ad.reshape(ad.tanh(params.gates[i]), (c, o, 1)), 2, n
            )
            h = ad.add(h, ad.mul(g, ad.tanh(h)))
    return ad.reshape(ad.sigmoid(h), (c, n))


def rate_bits(params, coeffs, min_prob=DEFAULT_CONFIG.min_prob):
    """Total estimated bits for quantized coefficients (C, N).

    Per-symbol probability is the CDF mass of the centered unit bin,
    floored at ``min_prob``.  Both CDF evaluations share one network pass.
    """
    c, n = coeffs.shape
    both = entropy_cdf(
        params,
        ad.concat([ad.add_scalar(coeffs, 0.5), ad.add_scalar(coeffs, -0.5)], axis=1),
    )
    upper = ad.slice_nd(both, (0, 0), (c, n))
    lower = ad.slice_nd(both, (0, n), (c, n))
    p = ad.clamp_min(ad.sub(upper, lower), min_prob)
    return ad.scale(ad.sum_all(ad.log(p)), -1.0 / math.log(2.0))


def fit_entropy_model(samples, steps=400, lr=0.02, seed=0, params=None,
                      min_prob=DEFAULT_CONFIG.min_prob):
    """Fit the factorized model to observed quantized coefficients.

    ``samples`` is (C, N) in quantized units.  Runs Adam on mean
    bits/symbol (direct discrete max-likelihood); returns the params.
    """
    s = np.asarray(samples, dtype=np.float32)
    if s.ndim != 2:
        raise ValueError("fit_entropy_model: samples must be (C, N)")
    c, n = s.shape
    if params is None:
        params = init_entropy_model(channels=c, seed=seed)
    opt = optim.Adam(params.tensors(), lr=lr)
    data = ad.constant(s)
    for _ in range(int(steps)):
        opt.zero_grad()
        with ad.Tape() as tape:
            loss = ad.scale(rate_bits(params, data, min_prob), 1.0 / (c * n))
        ad.backward(loss, tape)
        opt.step()
    return params


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _check_frame_geometry(h, w, cfg):
    if h % cfg.pred_block or w % cfg.pred_block:
        raise ValueError(
            f"frame {h}x{w} is not a multiple of pred_block={cfg.pred_block}"
        )


def _select_mode(cur_blk, by, bx, blocks, grid, cfg):
    """Pick the predictor by SAD on detached values.

    Candidates in fixed order (DC, horizontal, vertical, inter); strict
    improvement required, so earlier candidates win ties.
    """
    bp = cfg.pred_block
    above = blocks[(by - 1, bx)].values[bp - 1:bp, :] if by > 0 else None
    left = blocks[(by, bx - 1)].values[:, bp - 1:bp] if bx > 0 else None
    if above is not None and left is not None:
        dcv = (above.sum(dtype=np.float64) + left.sum(dtype=np.float64)) / (2.0 * bp)
    elif above is not None:
        dcv = above.mean(dtype=np.float64)
    elif left is not None:
        dcv = left.mean(dtype=np.float64)
    else:
        dcv = 0.5
    c64 = cur_blk.astype(np.float64)
    cands = [("dc", 0, 0, np.abs(c64 - dcv).sum())]
    if left is not None:
        cands.append(("h", 0, 0, np.abs(c64 - left.astype(np.float64)).sum()))
    if above is not None:
        cands.append(("v", 0, 0, np.abs(c64 - above.astype(np.float64)).sum()))
    if grid is not None:
        sad, dy, dx = grid
        cands.append(("inter", int(dy[by, bx]), int(dx[by, bx]), float(sad[by, bx])))
    best = cands[0]
    for cand in cands[1:]:
        if cand[3] < best[3]:
            best = cand
    return best[:3]


def _build_pred(choice, by, bx, blocks, recon_prev, cfg):
    """Graph nodes for one predictor; only the chosen path is ever built."""
    mode, dy, dx = choice
    bp = cfg.pred_block
    if mode == "dc":
        parts = []
        if by > 0:
            parts.append(ad.reshape(
                ad.slice_nd(blocks[(by - 1, bx)], (bp - 1, 0), (1, bp)), (bp,)))
        if bx > 0:
            parts.append(ad.reshape(
                ad.slice_nd(blocks[(by, bx - 1)], (0, bp - 1), (bp, 1)), (bp,)))
        if parts:
            dc = ad.mean_all(ad.concat(parts, 0))
        else:
            dc = ad.constant(np.float32(0.5))
        return ad.repeat_axis(ad.repeat_axis(ad.reshape(dc, (1, 1)), 0, bp), 1, bp)
    if mode == "h":
        if bx == 0:
            raise ValueError("side_info: horizontal mode without a left border")
        left = ad.slice_nd(blocks[(by, bx - 1)], (0, bp - 1), (bp, 1))
        return ad.repeat_axis(left, 1, bp)
    if mode == "v":
        if by == 0:
            raise ValueError("side_info: vertical mode without a top border")
        above = ad.slice_nd(blocks[(by - 1, bx)], (bp - 1, 0), (1, bp))
        return ad.repeat_axis(above, 0, bp)
    if mode == "inter":
        if recon_prev is None:
            raise ValueError("side_info: inter mode on the first frame")
        return ad.slice_nd(recon_prev, (by * bp + dy, bx * bp + dx), (bp, bp))
    raise ValueError(f"unknown prediction mode {mode!r}")


def _motion_grid(cur_vals, prev_vals, cfg):
    return kernels.sad_search(
        np.ascontiguousarray(cur_vals),
        np.ascontiguousarray(prev_vals),
        cfg.pred_block,
        cfg.search_range,
    )


def _assemble(blocks, nby, nbx):
    rows = [
        ad.concat([blocks[(by, bx)] for bx in range(nbx)], axis=1)
        for by in range(nby)
    ]
    return ad.concat(rows, axis=0)


def predict_frame(cur, recon_prev=None, cfg=None, side_info=None):
    """Predict one frame without residual coding.

    Later blocks use earlier *predictions* as their border state (inside
    ``virtual_encode`` the true reconstruction takes that role).  Returns
    ``(pred (H, W) Tensor, side_info)`` where side_info is a raster list of
    ``(mode, dy, dx)`` per block; pass it back in to reuse the decisions.
    """
    cfg = cfg or DEFAULT_CONFIG
    cur_t = cur if isinstance(cur, ad.Tensor) else ad.constant(np.asarray(cur, np.float32))
    if cur_t.ndim != 2:
        raise ValueError("predict_frame: frame must be 2-D")
    h, w = cur_t.shape
    _check_frame_geometry(h, w, cfg)
    bp = cfg.pred_block
    nby, nbx = h // bp, w // bp
    grid = None
    if recon_prev is not None:
        grid = _motion_grid(cur_t.values, recon_prev.values, cfg)
    blocks = {}
    info = []
    i = 0
    for by in range(nby):
        for bx in range(nbx):
            if side_info is not None:
                choice = tuple(side_info[i])
            else:
                blk = cur_t.values[by * bp:(by + 1) * bp, bx * bp:(bx + 1) * bp]
                choice = _select_mode(blk, by, bx, blocks, grid, cfg)
            blocks[(by, bx)] = _build_pred(choice, by, bx, blocks, recon_prev, cfg)
            info.append(choice)
            i += 1
    return _assemble(blocks, nby, nbx), info


# ---------------------------------------------------------------------------
# full encode
# ---------------------------------------------------------------------------


@dataclass
class RDResult:
    bits: ad.Tensor        # scalar: estimated clip bits
    bpp: ad.Tensor         # scalar: bits per luma pixel
    distortion: ad.Tensor  # scalar: MSE of recon against the original source
    recon: ad.Tensor       # (T, H, W)
    side_info: list        # per frame: raster list of (mode, dy, dx)


def virtual_encode(x, source, f_q, params, cfg=None, mode="round", rng=None,
                   side_info=None):
    """Encode a clip through the virtual codec.

    ``x`` is the (possibly preprocessed) clip (T, H, W) in [0, 1];
    ``source`` is the original clip the distortion is measured against.
    ``mode`` selects rounding ("round") or the additive-noise relaxation
    ("noise", needs ``rng``).  ``side_info`` from a previous result freezes
    mode/motion decisions; otherwise they are recomputed and returned.
    """
    cfg = cfg or DEFAULT_CONFIG
    if mode not in ("round", "noise"):
        raise ValueError(f"virtual_encode: unknown mode {mode!r}")
    if mode == "noise" and rng is None:
        raise ValueError("virtual_encode: noise mode needs an rng")
    xt = x if isinstance(x, ad.Tensor) else ad.constant(np.asarray(x, np.float32))
    if xt.ndim != 3:
        raise ValueError("virtual_encode: clip must be (T, H, W)")
    t_n, h, w = xt.shape
    _check_frame_geometry(h, w, cfg)
    src = source if isinstance(source, ad.Tensor) else ad.constant(
        np.asarray(source, np.float32))
    if src.shape != xt.shape:
        raise ValueError(
            f"virtual_encode: source shape {src.shape} != clip shape {xt.shape}"
        )
    step = quant_step(f_q)
    bp = cfg.pred_block
    nby, nbx = h // bp, w // bp

    recon_frames = []
    coeff_rows = []
    info_out = []
    recon_prev = None
    for t in range(t_n):
        cur = ad.reshape(ad.slice_nd(xt, (t, 0, 0), (1, h, w)), (h, w))
        grid = None
        if recon_prev is not None:
            grid = _motion_grid(cur.values, recon_prev.values, cfg)
        forced = side_info[t] if side_info is not None else None
        blocks, qblocks, finfo = {}, {}, []
        i = 0
        for by in range(nby):
            for bx in range(nbx):
                if forced is not None:
                    choice = tuple(forced[i])
                else:
                    blk = cur.values[by * bp:(by + 1) * bp, bx * bp:(bx + 1) * bp]
                    choice = _select_mode(blk, by, bx, blocks, grid, cfg)
                pred = _build_pred(choice, by, bx, blocks, recon_prev, cfg)
                cur_blk = ad.slice_nd(cur, (by * bp, bx * bp), (bp, bp))
                res = ad.scale(ad.sub(cur_blk, pred), cfg.pixel_scale)
                q = quantize(ad.block_dct8(res), step, mode, rng)
                rec_res = ad.scale(ad.block_idct8(dequantize(q, step)),
                                   1.0 / cfg.pixel_scale)
                blocks[(by, bx)] = ad.clamp01(ad.add(pred, rec_res))
                qblocks[(by, bx)] = q
                finfo.append(choice)
                i += 1
        frame_rec = _assemble(blocks, nby, nbx)
        coeff_rows.append(ad.coeff_channels(_assemble(qblocks, nby, nbx)))
        recon_frames.append(ad.reshape(frame_rec, (1, h, w)))
        recon_prev = frame_rec
        info_out.append(finfo)

    recon = ad.concat(recon_frames, axis=0)
    bits = rate_bits(params, ad.concat(coeff_rows, axis=1), cfg.min_prob)
    bpp = ad.scale(bits, 1.0 / (t_n * h * w))
    distortion = ad.mse(recon, src)
    return RDResult(bits=bits, bpp=bpp, distortion=distortion, recon=recon,
                    side_info=info_out)
