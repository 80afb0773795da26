# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: same contracts as vcmpre.kernels.numpy_backend.

Float32 storage, float64 accumulation.  Loops are arranged so the per-image
accumulator plane stays L1-resident (32 KiB for a 64x64 float64 plane).

The conv entry points accept the same optional ``cache`` dict as the numpy
backend but ignore it: these loops never materialise im2col columns, so there
is nothing to reuse between forward and backward.
"""

import numpy as np

NAME = "compiled"

cdef double[8][8] _DCT
cdef double[8][8] _DCT_T


def _init_dct():
    cdef int u, i
    d = np.cos(np.pi * (2.0 * np.arange(8.0)[None, :] + 1.0)
               * np.arange(8.0)[:, None] / 16.0) * np.sqrt(0.25)
    d[0] *= np.sqrt(0.5)
    for u in range(8):
        for i in range(8):
            _DCT[u][i] = d[u, i]
            _DCT_T[i][u] = d[u, i]


_init_dct()


def conv2d_forward(x, w, b, cache=None):
    cdef const float[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef const float[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef Py_ssize_t o = wv.shape[0], k = wv.shape[2], pad = k // 2
    y = np.empty((n, o, h, wd), dtype=np.float32)
    cdef float[:, :, :, ::1] yv = y
    acc_arr = np.empty((h, wd), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr
    cdef double[::1] bias = np.zeros(o, dtype=np.float64) if b is None else \
        np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t ni, oi, ci, ky, kx, hh, ww, h0, h1, x0, x1, iy, ix
    cdef double wgt, bj
    for ni in range(n):
        for oi in range(o):
            bj = bias[oi]
            for hh in range(h):
                for ww in range(wd):
                    acc[hh, ww] = bj
            for ci in range(c):
                for ky in range(k):
                    h0 = pad - ky if ky < pad else 0
                    h1 = h + pad - ky if ky > pad else h
                    for kx in range(k):
                        x0 = pad - kx if kx < pad else 0
                        x1 = wd + pad - kx if kx > pad else wd
                        wgt = wv[oi, ci, ky, kx]
                        if wgt == 0.0:
                            continue
                        for hh in range(h0, h1):
                            iy = hh + ky - pad
                            for ww in range(x0, x1):
                                acc[hh, ww] += wgt * xv[ni, ci, iy, ww + kx - pad]
            for hh in range(h):
                for ww in range(wd):
                    yv[ni, oi, hh, ww] = <float> acc[hh, ww]
    return y


def conv2d_backward(x, w, gy, need_gx=True, need_gw=True, cache=None):
    cdef const float[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef const float[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float32)
    cdef const float[:, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], wd = xv.shape[3]
    cdef Py_ssize_t o = wv.shape[0], k = wv.shape[2], pad = k // 2
    cdef bint want_gx = bool(need_gx), want_gw = bool(need_gw)

    gb_arr = np.zeros(o, dtype=np.float64)
    cdef double[::1] gb = gb_arr
    gw_arr = np.zeros((o, c, k, k), dtype=np.float64)
    cdef double[:, :, :, ::1] gwv = gw_arr
    gx = np.zeros((n, c, h, wd), dtype=np.float32) if want_gx else None
    cdef float[:, :, :, ::1] gxv = gx if want_gx else None
    acc_arr = np.empty((h, wd), dtype=np.float64)
    cdef double[:, ::1] acc = acc_arr

    cdef Py_ssize_t ni, oi, ci, ky, kx, hh, ww, h0, h1, x0, x1, iy
    cdef double wgt, gval, s
    for ni in range(n):
        for oi in range(o):
            s = 0.0
            for hh in range(h):
                for ww in range(wd):
                    s += gv[ni, oi, hh, ww]
            gb[oi] += s
        if want_gx:
            for ci in range(c):
                for hh in range(h):
                    for ww in range(wd):
                        acc[hh, ww] = 0.0
                for oi in range(o):
                    for ky in range(k):
                        h0 = pad - ky if ky < pad else 0
                        h1 = h + pad - ky if ky > pad else h
                        for kx in range(k):
                            x0 = pad - kx if kx < pad else 0
                            x1 = wd + pad - kx if kx > pad else wd
                            wgt = wv[oi, ci, ky, kx]
                            if wgt == 0.0:
                                continue
                            # gx[h+ky-pad, w+kx-pad] += gy[h, w] * w
                            for hh in range(h0, h1):
                                iy = hh + ky - pad
                                for ww in range(x0, x1):
                                    acc[iy, ww + kx - pad] += wgt * gv[ni, oi, hh, ww]
                for hh in range(h):
                    for ww in range(wd):
                        gxv[ni, ci, hh, ww] = <float> acc[hh, ww]
        if want_gw:
            for oi in range(o):
                for ci in range(c):
                    for ky in range(k):
                        h0 = pad - ky if ky < pad else 0
                        h1 = h + pad - ky if ky > pad else h
                        for kx in range(k):
                            x0 = pad - kx if kx < pad else 0
                            x1 = wd + pad - kx if kx > pad else wd
                            s = 0.0
                            for hh in range(h0, h1):
                                iy = hh + ky - pad
                                for ww in range(x0, x1):
                                    s += gv[ni, oi, hh, ww] * xv[ni, ci, iy, ww + kx - pad]
                            gwv[oi, ci, ky, kx] += s
    gw_out = gw_arr.astype(np.float32) if want_gw else None
    return gx, gw_out, gb_arr.astype(np.float32)


def convt_forward(x, w, b, cache=None):
    cdef const float[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef const float[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float32)
    cdef Py_ssize_t bn = xv.shape[0], t = xv.shape[1], c = xv.shape[2]
    cdef Py_ssize_t h = xv.shape[3], wd = xv.shape[4]
    cdef Py_ssize_t o = wv.shape[0], kt = wv.shape[2], pad = kt // 2
    y = np.empty((bn, t, o, h, wd), dtype=np.float32)
    cdef float[:, :, :, :, ::1] yv = y
    acc_arr = np.empty(h * wd, dtype=np.float64)
    cdef double[::1] acc = acc_arr
    cdef double[::1] bias = np.zeros(o, dtype=np.float64) if b is None else \
        np.ascontiguousarray(b, dtype=np.float64)
    cdef Py_ssize_t bi, ti, oi, ci, dt, it, m, hh, ww, idx
    cdef double wgt, bj
    cdef const float[:, ::1] plane
    for bi in range(bn):
        for ti in range(t):
            for oi in range(o):
                bj = bias[oi]
                for idx in range(h * wd):
                    acc[idx] = bj
                for dt in range(kt):
                    it = ti + dt - pad
                    if it < 0 or it >= t:
                        continue
                    for ci in range(c):
                        wgt = wv[oi, ci, dt]
                        if wgt == 0.0:
                            continue
                        idx = 0
                        for hh in range(h):
                            for ww in range(wd):
                                acc[idx] += wgt * xv[bi, it, ci, hh, ww]
                                idx += 1
                idx = 0
                for hh in range(h):
                    for ww in range(wd):
                        yv[bi, ti, oi, hh, ww] = <float> acc[idx]
                        idx += 1
    return y


def convt_backward(x, w, gy, need_gx=True, need_gw=True, cache=None):
    cdef const float[:, :, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef const float[:, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float32)
    cdef const float[:, :, :, :, ::1] gv = np.ascontiguousarray(gy, dtype=np.float32)
    cdef Py_ssize_t bn = xv.shape[0], t = xv.shape[1], c = xv.shape[2]
    cdef Py_ssize_t h = xv.shape[3], wd = xv.shape[4]
    cdef Py_ssize_t o = wv.shape[0], kt = wv.shape[2], pad = kt // 2
    cdef bint want_gx = bool(need_gx), want_gw = bool(need_gw)

    gb_arr = np.zeros(o, dtype=np.float64)
    cdef double[::1] gb = gb_arr
    gw_arr = np.zeros((o, c, kt), dtype=np.float64)
    cdef double[:, :, ::1] gwv = gw_arr
    gx_acc = np.zeros((bn, t, c, h, wd), dtype=np.float64) if want_gx else None
    cdef double[:, :, :, :, ::1] gxv = gx_acc if want_gx else None

    cdef Py_ssize_t bi, ti, oi, ci, dt, it, hh, ww
    cdef double wgt, s, g
    for bi in range(bn):
        for ti in range(t):
            for oi in range(o):
                s = 0.0
                for hh in range(h):
                    for ww in range(wd):
                        s += gv[bi, ti, oi, hh, ww]
                gb[oi] += s
                for dt in range(kt):
                    it = ti + dt - pad
                    if it < 0 or it >= t:
                        continue
                    for ci in range(c):
                        wgt = wv[oi, ci, dt]
                        if want_gw:
                            s = 0.0
                            for hh in range(h):
                                for ww in range(wd):
                                    s += gv[bi, ti, oi, hh, ww] * xv[bi, it, ci, hh, ww]
                            gwv[oi, ci, dt] += s
                        if want_gx and wgt != 0.0:
                            for hh in range(h):
                                for ww in range(wd):
                                    gxv[bi, it, ci, hh, ww] += wgt * gv[bi, ti, oi, hh, ww]
    gx = gx_acc.astype(np.float32) if want_gx else None
    gw_out = gw_arr.astype(np.float32) if want_gw else None
    return gx, gw_out, gb_arr.astype(np.float32)


def dct8_apply(x, inverse=False):
    shape = x.shape
    nd = len(shape)
    h, wd = shape[nd - 2], shape[nd - 1]
    flat = np.ascontiguousarray(x, dtype=np.float32).reshape(-1, h, wd)
    cdef const float[:, :, ::1] xv = flat
    cdef Py_ssize_t l = xv.shape[0], hb = h // 8, wb = wd // 8
    out = np.empty_like(flat)
    cdef float[:, :, ::1] yv = out
    cdef bint inv = bool(inverse)
    cdef double[8][8] tmp
    cdef double[8][8] blk
    cdef Py_ssize_t li, by, bx, i, j, u, v
    cdef double s
    for li in range(l):
        for by in range(hb):
            for bx in range(wb):
                for i in range(8):
                    for j in range(8):
                        blk[i][j] = xv[li, by * 8 + i, bx * 8 + j]
                for u in range(8):
                    for j in range(8):
                        s = 0.0
                        for i in range(8):
                            s += (_DCT_T[u][i] if inv else _DCT[u][i]) * blk[i][j]
                        tmp[u][j] = s
                for u in range(8):
                    for v in range(8):
                        s = 0.0
                        for j in range(8):
                            s += tmp[u][j] * (_DCT[j][v] if inv else _DCT_T[j][v])
                        yv[li, by * 8 + u, bx * 8 + v] = <float> s
    return out.reshape(shape)


def sad_search(cur, ref, block, srange):
    cdef const float[:, ::1] cv = np.ascontiguousarray(cur, dtype=np.float32)
    cdef const float[:, ::1] rv = np.ascontiguousarray(ref, dtype=np.float32)
    cdef Py_ssize_t h = cv.shape[0], wd = cv.shape[1]
    cdef Py_ssize_t blk = int(block), sr = int(srange)
    cdef Py_ssize_t nby = h // blk, nbx = wd // blk
    sad_out = np.full((nby, nbx), np.inf, dtype=np.float64)
    dy_out = np.zeros((nby, nbx), dtype=np.int64)
    dx_out = np.zeros((nby, nbx), dtype=np.int64)
    cdef double[:, ::1] best = sad_out
    cdef long long[:, ::1] bdy = dy_out
    cdef long long[:, ::1] bdx = dx_out
    cdef Py_ssize_t by, bx, dy, dx, y0, x0, i, j
    cdef double s, d
    for by in range(nby):
        for bx in range(nbx):
            for dy in range(-sr, sr + 1):
                y0 = by * blk + dy
                if y0 < 0 or y0 + blk > h:
                    continue
                for dx in range(-sr, sr + 1):
                    x0 = bx * blk + dx
                    if x0 < 0 or x0 + blk > wd:
                        continue
                    s = 0.0
                    for i in range(blk):
                        for j in range(blk):
                            d = cv[by * blk + i, bx * blk + j] - rv[y0 + i, x0 + j]
                            s += d if d >= 0.0 else -d
                    if s < best[by, bx]:
                        best[by, bx] = s
                        bdy[by, bx] = dy
                        bdx[by, bx] = dx
    return sad_out, dy_out, dx_out
