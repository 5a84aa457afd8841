"""Full-reference quality metrics for C x H x W cubes.

Peak / dynamic range defaults to 1.0. ``uiqi`` (mean universal image quality index)
stands in for Q2n and is always labelled as a substitute.
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DataIOError, DegenerateInputError

PSNR_CAP = 100.0
METRICS = ("ergas", "psnr", "ssim", "sam", "uiqi")
UIQI_LABEL = "uiqi (Q2n substitute)"


def _pair(x, ref, op):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ContractViolation(f"{op}: shapes {x.shape} and {ref.shape} differ")
    if x.ndim == 2:
        x, ref = x[None], ref[None]
    return x, ref


def psnr(x, ref, peak=1.0):
    x, ref = _pair(x, ref, "psnr")
    if peak <= 0:
        raise ContractViolation(f"psnr: peak must be > 0, got {peak}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def sam(x, ref):
    """Mean spectral angle in degrees; pixels where either spectrum is zero are skipped."""
    x, ref = _pair(x, ref, "sam")
    if x.shape[0] < 2:
        raise ContractViolation(f"sam: needs at least 2 bands, got {x.shape[0]}")
    a = x.reshape(x.shape[0], -1)
    b = ref.reshape(ref.shape[0], -1)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    keep = (na > 0) & (nb > 0)
    if not np.any(keep):
        raise DegenerateInputError("sam: every pixel has a zero spectrum")
    a, b, na, nb = a[:, keep], b[:, keep], na[keep], nb[keep]
    # angle via the stable two-norm form; exact zero for identical spectra
    p = a * nb
    q = b * na
    ang = 2.0 * np.arctan2(np.linalg.norm(p - q, axis=0), np.linalg.norm(p + q, axis=0))
    return float(np.degrees(np.mean(ang)))


def ergas(x, ref, s):
    x, ref = _pair(x, ref, "ergas")
    means = ref.reshape(ref.shape[0], -1).mean(axis=1)
    zero = np.flatnonzero(means == 0)
    if zero.size:
        raise DegenerateInputError(f"ergas: reference band {int(zero[0])} has zero mean")
    rmse2 = ((x - ref) ** 2).reshape(x.shape[0], -1).mean(axis=1)
    return float(100.0 / s * np.sqrt(np.mean(rmse2 / means**2)))


def _gaussian_window(size=11, sigma=1.5):
    t = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(t * t) / (2 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _local_mean(img, win):
    """Valid-mode weighted window sums for each band, via sliding windows."""
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(img, (k, k), axis=(-2, -1))
    return np.einsum("...ij,ij->...", view, win)


def _check_window(x, k, op):
    if x.shape[-1] < k or x.shape[-2] < k:
        raise ContractViolation(f"{op}: image {x.shape[-2:]} smaller than the {k}x{k} window")


def ssim(x, ref, peak=1.0, k1=0.01, k2=0.03, win_size=11, win_sigma=1.5):
    """Mean SSIM over valid Gaussian windows and bands."""
    x, ref = _pair(x, ref, "ssim")
    win = _gaussian_window(win_size, win_sigma)
    _check_window(x, win.shape[0], "ssim")
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mx, my = _local_mean(x, win), _local_mean(ref, win)
    sxx = _local_mean(x * x, win) - mx * mx
    syy = _local_mean(ref * ref, win) - my * my
    sxy = _local_mean(x * ref, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(np.mean(num / den, axis=(-2, -1))))


def uiqi_mean(x, ref, block=8):
    """Sliding-window universal image quality index averaged over windows and bands."""
    x, ref = _pair(x, ref, "uiqi")
    _check_window(x, block, "uiqi")
    win = np.full((block, block), 1.0 / block**2)
    mx, my = _local_mean(x, win), _local_mean(ref, win)
    sxx = _local_mean(x * x, win) - mx * mx
    syy = _local_mean(ref * ref, win) - my * my
    sxy = _local_mean(x * ref, win) - mx * my
    num = (4 * sxy) * (mx * my)
    den = (sxx + syy) * (mx * mx + my * my)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(den != 0, num / np.where(den != 0, den, 1.0), 0.0)
    # flat windows: perfect score when the two windows coincide
    if np.any(den == 0):
        vx = np.lib.stride_tricks.sliding_window_view(x, (block, block), axis=(-2, -1))
        vy = np.lib.stride_tricks.sliding_window_view(ref, (block, block), axis=(-2, -1))
        same = np.all(vx == vy, axis=(-2, -1))
        q = np.where((den == 0) & same, 1.0, q)
    return float(np.mean(np.mean(q, axis=(-2, -1))))


def error_map(x, ref, pct=99.0):
    x, ref = _pair(x, ref, "error_map")
    e = np.mean(np.abs(x - ref), axis=0)
    hi = np.percentile(e, pct)
    if hi <= 0:
        hi = e.max()
    if hi <= 0:
        return np.zeros((1,) + e.shape)
    return (np.minimum(e, hi) / hi)[None]


def all_metrics(x, ref, s, peak=1.0):
    return {
        "ergas": ergas(x, ref, s),
        "psnr": psnr(x, ref, peak),
        "ssim": ssim(x, ref, peak),
        "sam": sam(x, ref),
        "uiqi": uiqi_mean(x, ref),
    }


@dataclass
class MetricReport:
    split: str = ""
    ids: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    def add(self, sample_id, values):
        self.ids.append(sample_id)
        self.rows.append({k: float(values[k]) for k in METRICS})

    @property
    def means(self):
        if not self.rows:
            return {k: float("nan") for k in METRICS}
        return {k: float(np.mean([r[k] for r in self.rows])) for k in METRICS}

    def to_csv(self, path):
        try:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh)
                w.writerow(("sample_id",) + METRICS)
                for sid, row in zip(self.ids, self.rows):
                    w.writerow([sid] + [repr(row[k]) for k in METRICS])
                means = self.means
                w.writerow(["mean"] + [repr(means[k]) for k in METRICS])
        except OSError as exc:
            raise DataIOError(f"cannot write {path}: {exc.strerror}") from exc

    def summary(self):
        m = self.means
        names = {k: (UIQI_LABEL if k == "uiqi" else k) for k in METRICS}
        return ", ".join(f"{names[k]}={m[k]:.4f}" for k in METRICS)


def read_report_csv(path):
    """Per-sample rows (the trailing mean row is dropped) as {sample_id: {metric: value}}."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc.strerror}") from exc
    out = {}
    for row in rows:
        if row.get("sample_id") == "mean":
            continue
        try:
            out[row["sample_id"]] = {k: float(row[k]) for k in METRICS if k in row}
        except (KeyError, ValueError) as exc:
            raise DataIOError(f"{path}: malformed metric row {row}") from exc
    return out
