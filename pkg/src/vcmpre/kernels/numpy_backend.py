"""Pure numpy implementations of the hot array kernels.

Convolution forwards and input gradients run as a single float32 im2col GEMM
(a float64 path is memory-bound and several times slower, and those sums are
short).  Weight gradients reduce over the whole batch with heavy sign
cancellation, where float32 accumulation noise is visible next to small
entries, so they accumulate in float64 (chunked so no full-size float64 copy
of the columns ever exists).  Bias gradients, the block DCT and the SAD
search also accumulate in float64.  The compiled backend in
``vcmpre._ckernels`` implements the same signatures with float64 accumulators
throughout; the two must agree within float32 round-off.
"""

import numpy as np

NAME = "numpy"


# ---------------------------------------------------------------------------
# 2-D convolution, stride 1, zero padding, odd square kernel ("same" output)
# ---------------------------------------------------------------------------


def _im2col2d(x, k):
    """x (N,C,H,W) -> columns (N*H*W, k*k*C), offsets raster-ordered."""
    n, c, h, wd = x.shape
    if k == 1:
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1).reshape(-1, c))
    pad = k // 2
    xp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=np.float32)
    xp[:, pad : pad + h, pad : pad + wd, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n * h * wd, k * k * c), dtype=np.float32)
    i = 0
    for ky in range(k):
        for kx in range(k):
            cols[:, i * c : (i + 1) * c] = xp[:, ky : ky + h, kx : kx + wd, :].reshape(-1, c)
            i += 1
    return cols


def _wmat2d(w):
    """w (O,C,k,k) -> (k*k*C, O) matching the _im2col2d column order."""
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(-1, w.shape[0]),
                                dtype=np.float32)


def _gw_gemm64(cols, gyf, chunk=8192):
    """cols.T @ gyf accumulated in float64, casting one row chunk at a time."""
    acc = np.zeros((cols.shape[1], gyf.shape[1]), dtype=np.float64)
    for i in range(0, cols.shape[0], chunk):
        sl = slice(i, i + chunk)
        acc += cols[sl].astype(np.float64).T @ gyf[sl].astype(np.float64)
    return acc.astype(np.float32)


def conv2d_forward(x, w, b, cache=None):
    """x (N,C,H,W), w (O,C,k,k), b (O,) or None -> y (N,O,H,W).

    A dict passed as ``cache`` receives the im2col columns so a later
    backward call can skip rebuilding them (pure speed/memory trade).
    """
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    cols = _im2col2d(x, k)
    if cache is not None:
        cache["cols"] = cols
    y = cols @ _wmat2d(w)
    if b is not None:
        y += b.astype(np.float32)
    return np.ascontiguousarray(y.reshape(n, h, wd, o).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy, need_gx=True, need_gw=True, cache=None):
    """Gradients of conv2d_forward; returns (gx, gw, gb) with None where skipped."""
    n, c, h, wd = x.shape
    o, ci, k, k2 = w.shape
    pad = k // 2
    gyf = np.ascontiguousarray(gy.transpose(0, 2, 3, 1), dtype=np.float32).reshape(-1, o)
    gb = gy.sum(axis=(0, 2, 3), dtype=np.float64).astype(np.float32)

    gw = None
    if need_gw:
        cols = cache.get("cols") if cache else None
        if cols is None:
            cols = _im2col2d(x, k)
        gw_m = _gw_gemm64(cols, gyf)
        gw = np.ascontiguousarray(gw_m.reshape(k, k, c, o).transpose(3, 2, 0, 1))

    gx = None
    if need_gx:
        gcol = gyf @ _wmat2d(w).T  # (N*H*W, k*k*C)
        gxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=np.float32)
        i = 0
        for ky in range(k):
            for kx in range(k):
                gxp[:, ky : ky + h, kx : kx + wd, :] += gcol[
                    :, i * c : (i + 1) * c
                ].reshape(n, h, wd, c)
                i += 1
        gx = np.ascontiguousarray(
            gxp[:, pad : pad + h, pad : pad + wd, :].transpose(0, 3, 1, 2)
        )
    return gx, gw, gb


# ---------------------------------------------------------------------------
# temporal (1-D along frame axis) convolution, zero padding in time
# ---------------------------------------------------------------------------


def _im2colt(x, kt):
    """x (B,T,C,H,W) -> columns (B*T*H*W, kt*C), taps in order."""
    bn, t, c, h, wd = x.shape
    pad = kt // 2
    m = h * wd
    xp = np.zeros((bn, t + 2 * pad, m, c), dtype=np.float32)
    xp[:, pad : pad + t] = x.reshape(bn, t, c, m).transpose(0, 1, 3, 2)
    cols = np.empty((bn * t * m, kt * c), dtype=np.float32)
    for dt in range(kt):
        cols[:, dt * c : (dt + 1) * c] = xp[:, dt : dt + t].reshape(-1, c)
    return cols


def convt_forward(x, w, b, cache=None):
    """x (B,T,C,H,W), w (O,C,kt), b (O,) or None -> y (B,T,O,H,W)."""
    bn, t, c, h, wd = x.shape
    o, ci, kt = w.shape
    m = h * wd
    cols = _im2colt(x, kt)
    if cache is not None:
        cache["cols"] = cols
    wm = np.ascontiguousarray(w.transpose(2, 1, 0).reshape(kt * c, o),
                              dtype=np.float32)
    y = cols @ wm
    if b is not None:
        y += b.astype(np.float32)
    y = y.reshape(bn, t, m, o).transpose(0, 1, 3, 2).reshape(bn, t, o, h, wd)
    return np.ascontiguousarray(y)


def convt_backward(x, w, gy, need_gx=True, need_gw=True, cache=None):
    bn, t, c, h, wd = x.shape
    o, ci, kt = w.shape
    pad = kt // 2
    m = h * wd
    gyf = np.ascontiguousarray(
        gy.reshape(bn, t, o, m).transpose(0, 1, 3, 2), dtype=np.float32
    ).reshape(-1, o)
    gb = gy.sum(axis=(0, 1, 3, 4), dtype=np.float64).astype(np.float32)
    wm = np.ascontiguousarray(w.transpose(2, 1, 0).reshape(kt * c, o),
                              dtype=np.float32)

    gw = None
    if need_gw:
        cols = cache.get("cols") if cache else None
        if cols is None:
            cols = _im2colt(x, kt)
        gw_m = _gw_gemm64(cols, gyf)  # (kt*C, O)
        gw = np.ascontiguousarray(gw_m.reshape(kt, c, o).transpose(2, 1, 0))

    gx = None
    if need_gx:
        gcol = gyf @ wm.T  # (B*T*M, kt*C)
        gxp = np.zeros((bn, t + 2 * pad, m, c), dtype=np.float32)
        for dt in range(kt):
            gxp[:, dt : dt + t] += gcol[:, dt * c : (dt + 1) * c].reshape(bn, t, m, c)
        gx = gxp[:, pad : pad + t].transpose(0, 1, 3, 2).reshape(bn, t, c, h, wd)
        gx = np.ascontiguousarray(gx)
    return gx, gw, gb


# ---------------------------------------------------------------------------
# 8x8 orthonormal DCT-II applied blockwise over the trailing two axes
# ---------------------------------------------------------------------------


def _dct_matrix(size=8):
    i = np.arange(size, dtype=np.float64)
    d = np.cos(np.pi * (2.0 * i[None, :] + 1.0) * i[:, None] / (2.0 * size))
    d *= np.sqrt(2.0 / size)
    d[0] *= np.sqrt(0.5)
    return d


DCT8 = _dct_matrix(8)


def dct8_apply(x, inverse=False):
    """Blockwise 8x8 transform of x (..., H, W); H, W multiples of 8."""
    h, wd = x.shape[-2], x.shape[-1]
    hb, wb = h // 8, wd // 8
    lead = x.shape[:-2]
    blocks = x.reshape(-1, hb, 8, wb, 8).transpose(0, 1, 3, 2, 4)
    blocks = np.ascontiguousarray(blocks, dtype=np.float64)
    d = DCT8
    if inverse:
        out = d.T @ blocks @ d
    else:
        out = d @ blocks @ d.T
    out = out.transpose(0, 1, 3, 2, 4).reshape(lead + (h, wd))
    return np.ascontiguousarray(out, dtype=np.float32)


# ---------------------------------------------------------------------------
# full-search SAD block matching against a reference frame
# ---------------------------------------------------------------------------


def sad_search(cur, ref, block, srange):
    """Best integer displacement per block of ``cur`` within ``ref``.

    Candidates (dy, dx) run over the square window [-srange, srange]^2 in
    raster order; only fully in-frame source blocks are considered and ties
    keep the earliest candidate.  Returns (sad (nby,nbx) float64,
    dy (nby,nbx) int64, dx (nby,nbx) int64).
    """
    h, wd = cur.shape
    nby, nbx = h // block, wd // block
    cur64 = cur.astype(np.float64)
    ref64 = ref.astype(np.float64)
    best = np.full((nby, nbx), np.inf, dtype=np.float64)
    bdy = np.zeros((nby, nbx), dtype=np.int64)
    bdx = np.zeros((nby, nbx), dtype=np.int64)
    for dy in range(-srange, srange + 1):
        by0 = max(0, (-dy + block - 1) // block) if dy < 0 else 0
        by1 = min(nby - 1, (h - block - dy) // block)
        if by0 > by1:
            continue
        for dx in range(-srange, srange + 1):
            bx0 = max(0, (-dx + block - 1) // block) if dx < 0 else 0
            bx1 = min(nbx - 1, (wd - block - dx) // block)
            if bx0 > bx1:
                continue
            ys, ye = by0 * block, (by1 + 1) * block
            xs, xe = bx0 * block, (bx1 + 1) * block
            diff = np.abs(cur64[ys:ye, xs:xe] - ref64[ys + dy : ye + dy, xs + dx : xe + dx])
            sad = diff.reshape(by1 - by0 + 1, block, bx1 - bx0 + 1, block).sum(axis=(1, 3))
            sub = (slice(by0, by1 + 1), slice(bx0, bx1 + 1))
            better = sad < best[sub]
            best[sub] = np.where(better, sad, best[sub])
            bdy[sub] = np.where(better, dy, bdy[sub])
            bdx[sub] = np.where(better, dx, bdx[sub])
    return best, bdy, bdx
