"""Hot inner loops: im2col/col2im for convolutions and the windowed attention kernels.

Every kernel has a pure-numpy implementation (``np_*``) and a numba one (``nb_*``).
The public names dispatch on ``USE_NUMBA``, which is on when numba imports and the
environment variable ``UNFOLD_PANSHARP_JIT`` is not ``"0"``.

Window offsets are enumerated row-major: ``o = (dy + r) * (2r + 1) + (dx + r)``.
Logits for neighbours that fall outside the image are ``-inf``.
"""
import os
import warnings

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    warnings.warn("numba could not be imported, using the numpy kernels")

    def njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco


USE_NUMBA = HAVE_NUMBA and os.environ.get("UNFOLD_PANSHARP_JIT", "1") != "0"


def window_size(r):
    return (2 * r + 1) ** 2


def _span(n, d):
    # rows y with 0 <= y + d < n
    return max(0, -d), min(n, n - d)


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def np_im2col(xp, k, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)


def np_col2im(cols, shape, k, stride, ho, wo):
    n, c, hp, wp = shape
    blocks = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    out = np.zeros(shape, dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki : ki + stride * (ho - 1) + 1 : stride, kj : kj + stride * (wo - 1) + 1 : stride] += blocks[
                :, :, ki, kj
            ]
    return out


def np_window_logits(q, k, r):
    n, _, h, w = q.shape
    side = 2 * r + 1
    out = np.full((n, side * side, h, w), -np.inf, dtype=q.dtype)
    for dy in range(-r, r + 1):
        y0, y1 = _span(h, dy)
        for dx in range(-r, r + 1):
            x0, x1 = _span(w, dx)
            if y0 >= y1 or x0 >= x1:
                continue
            o = (dy + r) * side + (dx + r)
            out[:, o, y0:y1, x0:x1] = np.einsum(
                "ndhw,ndhw->nhw", q[:, :, y0:y1, x0:x1], k[:, :, y0 + dy : y1 + dy, x0 + dx : x1 + dx]
            )
    return out


def np_window_logits_grad(g, q, k, r):
    h, w = q.shape[2:]
    side = 2 * r + 1
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    for dy in range(-r, r + 1):
        y0, y1 = _span(h, dy)
        for dx in range(-r, r + 1):
            x0, x1 = _span(w, dx)
            if y0 >= y1 or x0 >= x1:
                continue
            go = g[:, (dy + r) * side + (dx + r), None, y0:y1, x0:x1]
            dq[:, :, y0:y1, x0:x1] += go * k[:, :, y0 + dy : y1 + dy, x0 + dx : x1 + dx]
            dk[:, :, y0 + dy : y1 + dy, x0 + dx : x1 + dx] += go * q[:, :, y0:y1, x0:x1]
    return dq, dk


def np_window_apply(wts, v, r):
    h, w = v.shape[2:]
    side = 2 * r + 1
    out = np.zeros_like(v)
    for dy in range(-r, r + 1):
        y0, y1 = _span(h, dy)
        for dx in range(-r, r + 1):
            x0, x1 = _span(w, dx)
            if y0 >= y1 or x0 >= x1:
                continue
            wo = wts[:, (dy + r) * side + (dx + r), None, y0:y1, x0:x1]
            out[:, :, y0:y1, x0:x1] += wo * v[:, :, y0 + dy : y1 + dy, x0 + dx : x1 + dx]
    return out


def np_window_apply_grad(g, wts, v, r):
    h, w = v.shape[2:]
    side = 2 * r + 1
    dw = np.zeros_like(wts)
    dv = np.zeros_like(v)
    for dy in range(-r, r + 1):
        y0, y1 = _span(h, dy)
        for dx in range(-r, r + 1):
            x0, x1 = _span(w, dx)
            if y0 >= y1 or x0 >= x1:
                continue
            o = (dy + r) * side + (dx + r)
            gv = g[:, :, y0:y1, x0:x1]
            dw[:, o, y0:y1, x0:x1] = np.einsum("nfhw,nfhw->nhw", gv, v[:, :, y0 + dy : y1 + dy, x0 + dx : x1 + dx])
            dv[:, :, y0 + dy : y1 + dy, x0 + dx : x1 + dx] += wts[:, o, None, y0:y1, x0:x1] * gv
    return dw, dv


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

@njit(cache=True)
def nb_im2col(xp, k, stride, ho, wo):
    n, c = xp.shape[0], xp.shape[1]
    cols = np.empty((n * ho * wo, c * k * k), dtype=xp.dtype)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                col = 0
                for ch in range(c):
                    for ki in range(k):
                        for kj in range(k):
                            cols[row, col] = xp[b, ch, i * stride + ki, j * stride + kj]
                            col += 1
    return cols


@njit(cache=True)
def nb_col2im(cols, shape, k, stride, ho, wo):
    n, c, hp, wp = shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                col = 0
                for ch in range(c):
                    for ki in range(k):
                        for kj in range(k):
                            out[b, ch, i * stride + ki, j * stride + kj] += cols[row, col]
                            col += 1
    return out


@njit(cache=True)
def nb_window_logits(q, k, r):
    n, d, h, w = q.shape
    side = 2 * r + 1
    out = np.full((n, side * side, h, w), -np.inf, dtype=q.dtype)
    for b in range(n):
        for dy in range(-r, r + 1):
            y0, y1 = max(0, -dy), min(h, h - dy)
            for dx in range(-r, r + 1):
                x0, x1 = max(0, -dx), min(w, w - dx)
                o = (dy + r) * side + (dx + r)
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        out[b, o, y, x] = 0.0
                for ch in range(d):
                    for y in range(y0, y1):
                        for x in range(x0, x1):
                            out[b, o, y, x] += q[b, ch, y, x] * k[b, ch, y + dy, x + dx]
    return out


@njit(cache=True)
def nb_window_logits_grad(g, q, k, r):
    n, d, h, w = q.shape
    side = 2 * r + 1
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    for b in range(n):
        for dy in range(-r, r + 1):
            y0, y1 = max(0, -dy), min(h, h - dy)
            for dx in range(-r, r + 1):
                x0, x1 = max(0, -dx), min(w, w - dx)
                o = (dy + r) * side + (dx + r)
                for ch in range(d):
                    for y in range(y0, y1):
                        for x in range(x0, x1):
                            go = g[b, o, y, x]
                            dq[b, ch, y, x] += go * k[b, ch, y + dy, x + dx]
                            dk[b, ch, y + dy, x + dx] += go * q[b, ch, y, x]
    return dq, dk


@njit(cache=True)
def nb_window_apply(wts, v, r):
    n, f, h, w = v.shape
    side = 2 * r + 1
    out = np.zeros_like(v)
    for b in range(n):
        for dy in range(-r, r + 1):
            y0, y1 = max(0, -dy), min(h, h - dy)
            for dx in range(-r, r + 1):
                x0, x1 = max(0, -dx), min(w, w - dx)
                o = (dy + r) * side + (dx + r)
                for ch in range(f):
                    for y in range(y0, y1):
                        for x in range(x0, x1):
                            out[b, ch, y, x] += wts[b, o, y, x] * v[b, ch, y + dy, x + dx]
    return out


@njit(cache=True)
def nb_window_apply_grad(g, wts, v, r):
    n, f, h, w = v.shape
    side = 2 * r + 1
    dw = np.zeros_like(wts)
    dv = np.zeros_like(v)
    for b in range(n):
        for dy in range(-r, r + 1):
            y0, y1 = max(0, -dy), min(h, h - dy)
            for dx in range(-r, r + 1):
                x0, x1 = max(0, -dx), min(w, w - dx)
                o = (dy + r) * side + (dx + r)
                for ch in range(f):
                    for y in range(y0, y1):
                        for x in range(x0, x1):
                            gv = g[b, ch, y, x]
                            dw[b, o, y, x] += gv * v[b, ch, y + dy, x + dx]
                            dv[b, ch, y + dy, x + dx] += wts[b, o, y, x] * gv
    return dw, dv


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def im2col(xp, k, stride, ho, wo):
    if USE_NUMBA:
        return nb_im2col(np.ascontiguousarray(xp), k, stride, ho, wo)
    return np_im2col(xp, k, stride, ho, wo)


def col2im(cols, shape, k, stride, ho, wo):
    if USE_NUMBA:
        return nb_col2im(np.ascontiguousarray(cols), tuple(shape), k, stride, ho, wo)
    return np_col2im(cols, tuple(shape), k, stride, ho, wo)


def window_logits(q, k, r):
    if USE_NUMBA:
        return nb_window_logits(np.ascontiguousarray(q), np.ascontiguousarray(k), r)
    return np_window_logits(q, k, r)


def window_logits_grad(g, q, k, r):
    if USE_NUMBA:
        return nb_window_logits_grad(
            np.ascontiguousarray(g), np.ascontiguousarray(q), np.ascontiguousarray(k), r
        )
    return np_window_logits_grad(g, q, k, r)


def window_apply(wts, v, r):
    if USE_NUMBA:
        return nb_window_apply(np.ascontiguousarray(wts), np.ascontiguousarray(v), r)
    return np_window_apply(wts, v, r)


def window_apply_grad(g, wts, v, r):
    if USE_NUMBA:
        return nb_window_apply_grad(
            np.ascontiguousarray(g), np.ascontiguousarray(wts), np.ascontiguousarray(v), r
        )
    return np_window_apply_grad(g, wts, v, r)
