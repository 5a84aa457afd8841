"""Fixed image operators on arrays shaped (..., H, W), plus differentiable wrappers.

Blur and bicubic resampling are separable and realised as small dense matrices per
axis (cached by size), which makes their exact adjoints a transpose away. Boundaries
use half-sample symmetric extension, under which the Gaussian blur matrix is symmetric
and every row and column sums to one.
"""
import math
from functools import lru_cache

import numpy as np

from .autodiff import Tensor, linear_map
from .errors import ContractViolation


def prime_decomposition(s):
    """Prime factors of ``s`` in non-decreasing order; ``[]`` for 1."""
    if not isinstance(s, (int, np.integer)) or s <= 0:
        raise ContractViolation(f"prime_decomposition: expected a positive integer, got {s!r}")
    s = int(s)
    out = []
    p = 2
    while p * p <= s:
        while s % p == 0:
            out.append(p)
            s //= p
        p += 1
    if s > 1:
        out.append(s)
    return out


def _check_divisible(x, q, op):
    for axis, n in zip(("H", "W"), x.shape[-2:]):
        if n % q:
            raise ContractViolation(f"{op}: extent {axis}={n} is not divisible by {q}")


def decimate(x, q):
    """Keep every q-th sample starting at offset 0 on both trailing axes."""
    _check_divisible(x, q, "decimate")
    return x[..., ::q, ::q].copy()


def zero_insert(y, q):
    """Adjoint of :func:`decimate`."""
    h, w = y.shape[-2:]
    out = np.zeros(y.shape[:-2] + (h * q, w * q), dtype=y.dtype)
    out[..., ::q, ::q] = y
    return out


def _reflect(j, n):
    m = np.mod(j, 2 * n)
    return np.where(m >= n, 2 * n - 1 - m, m)


def gaussian_kernel1d(sigma):
    radius = math.ceil(4 * sigma)
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


@lru_cache(maxsize=256)
def blur_matrix(n, sigma):
    if sigma == 0:
        return np.eye(n)
    k = gaussian_kernel1d(sigma)
    radius = len(k) // 2
    m = np.zeros((n, n))
    rows = np.arange(n)
    for t, wt in zip(range(-radius, radius + 1), k):
        np.add.at(m, (rows, _reflect(rows + t, n)), wt)
    return m


def _keys(x, a=-0.5):
    x = np.abs(x)
    return np.where(
        x <= 1,
        (a + 2) * x**3 - (a + 3) * x**2 + 1,
        np.where(x < 2, a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a, 0.0),
    )


@lru_cache(maxsize=256)
def resample_matrix(n_in, n_out):
    """Catmull-Rom interpolation matrix (n_out, n_in) with pixel-centre alignment.

    For minification the kernel is stretched by the reduction factor (antialiasing).
    """
    scale = n_out / n_in
    kscale = min(1.0, scale)
    support = 2.0 / kscale
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        x = (i + 0.5) / scale - 0.5
        taps = np.arange(math.floor(x - support) + 1, math.ceil(x + support))
        w = _keys((x - taps) * kscale) * kscale
        w = w / w.sum()
        np.add.at(m[i], _reflect(taps, n_in), w)
    return m


def _apply_separable(x, mh, mw):
    return np.matmul(np.matmul(mh.astype(x.dtype), x), mw.T.astype(x.dtype))


def gaussian_blur(x, sigma):
    if sigma < 0:
        raise ContractViolation(f"gaussian_blur: sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return x.copy()
    h, w = x.shape[-2:]
    return _apply_separable(x, blur_matrix(h, float(sigma)), blur_matrix(w, float(sigma)))


def gaussian_blur_adjoint(y, sigma):
    if sigma == 0:
        return y.copy()
    h, w = y.shape[-2:]
    return _apply_separable(y, blur_matrix(h, float(sigma)).T, blur_matrix(w, float(sigma)).T)


def bicubic_resample(x, s, direction="up"):
    if s == 1:
        return x.copy()
    h, w = x.shape[-2:]
    if direction == "up":
        ho, wo = h * s, w * s
    elif direction == "down":
        _check_divisible(x, s, "bicubic_resample")
        ho, wo = h // s, w // s
    else:
        raise ContractViolation(f"bicubic_resample: direction must be 'up' or 'down', got {direction!r}")
    return _apply_separable(x, resample_matrix(h, ho), resample_matrix(w, wo))


def bicubic_resample_adjoint(y, s, direction="up"):
    if s == 1:
        return y.copy()
    ho, wo = y.shape[-2:]
    h, w = (ho // s, wo // s) if direction == "up" else (ho * s, wo * s)
    return _apply_separable(y, resample_matrix(h, ho).T, resample_matrix(w, wo).T)


# ---------------------------------------------------------------------------
# differentiable wrappers
# ---------------------------------------------------------------------------

def t_decimate(x: Tensor, q: int) -> Tensor:
    _check_divisible(x.data, q, "decimate")
    return linear_map(x, lambda a: decimate(a, q), lambda g: zero_insert(g, q), "decimate")


def t_zero_insert(x: Tensor, q: int) -> Tensor:
    return linear_map(x, lambda a: zero_insert(a, q), lambda g: decimate(g, q), "zero_insert")


def t_blur(x: Tensor, sigma: float) -> Tensor:
    return linear_map(x, lambda a: gaussian_blur(a, sigma), lambda g: gaussian_blur_adjoint(g, sigma), "blur")


def t_blur_adjoint(x: Tensor, sigma: float) -> Tensor:
    return linear_map(x, lambda a: gaussian_blur_adjoint(a, sigma), lambda g: gaussian_blur(g, sigma), "blur_adj")


def t_bicubic(x: Tensor, s: int, direction="up") -> Tensor:
    return linear_map(
        x,
        lambda a: bicubic_resample(a, s, direction),
        lambda g: bicubic_resample_adjoint(g, s, direction),
        f"bicubic_{direction}",
    )
