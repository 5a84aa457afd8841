"""Component-substitution baselines; intensity is the plain band mean."""
import numpy as np

from .errors import ContractViolation, DegenerateInputError
from .imaging import bicubic_resample

KINDS = ("bicubic", "brovey", "ihs")
EPS = 1e-8


def _prepare(Y, P, s):
    Y = np.asarray(Y, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if P.ndim == 2:
        P = P[None]
    c, h, w = Y.shape
    if P.shape != (1, h * s, w * s):
        raise ContractViolation(f"fuse_baseline: PAN {P.shape} does not match low-res {Y.shape} at s={s}")
    up = bicubic_resample(Y, s, "up")
    return up, P, up.mean(axis=0, keepdims=True)


def bicubic(Y, P, s):
    return bicubic_resample(np.asarray(Y, dtype=np.float64), s, "up")


def brovey(Y, P, s):
    up, P, inten = _prepare(Y, P, s)
    if np.all(np.abs(inten) < EPS):
        raise DegenerateInputError("brovey: intensity is zero everywhere")
    safe = np.where(np.abs(inten) < EPS, EPS, inten)
    return up * P / safe


def ihs(Y, P, s):
    up, P, inten = _prepare(Y, P, s)
    if np.all(np.abs(inten) < EPS):
        raise DegenerateInputError("ihs: intensity is zero everywhere")
    return up + (P - inten)


def fuse_baseline(kind, Y, P, s):
    fn = {"bicubic": bicubic, "brovey": brovey, "ihs": ihs}.get(kind)
    if fn is None:
        raise ContractViolation(f"fuse_baseline: kind must be one of {KINDS}, got {kind!r}")
    return fn(Y, P, s)
