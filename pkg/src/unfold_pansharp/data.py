"""Synthetic scenes, Wald-protocol degradation and on-disk datasets."""
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DataIOError
from .imaging import decimate, gaussian_blur
from .tenfile import ensure_dir, load_ten, save_ten

GENERATOR_VERSION = "synth-v1"
SPLITS = ("train", "val", "test")


def philox(*key):
    """Counter-based generator keyed by integers (stable across platforms and numpy versions)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(k) for k in key])))


@dataclass
class FusionSample:
    gt: np.ndarray
    pan: np.ndarray
    lowres: np.ndarray
    s: int
    sigma: float
    sample_id: str = ""


def _smooth_field(rng, h, w, scale):
    coarse = rng.standard_normal((max(2, h // scale) + 4, max(2, w // scale) + 4))
    ys = np.linspace(2, coarse.shape[0] - 3, h)
    xs = np.linspace(2, coarse.shape[1] - 3, w)
    # separable linear interpolation of the coarse grid, then a light blur
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    fy, fx = (ys - y0)[:, None], (xs - x0)[None, :]
    c = coarse
    f = (
        c[y0][:, x0] * (1 - fy) * (1 - fx)
        + c[y0 + 1][:, x0] * fy * (1 - fx)
        + c[y0][:, x0 + 1] * (1 - fy) * fx
        + c[y0 + 1][:, x0 + 1] * fy * fx
    )
    return gaussian_blur(f, scale / 4.0)


def _regions(rng, h, w, n_regions):
    """Piecewise-constant Voronoi labelling with random values per cell."""
    cy = rng.uniform(0, h, n_regions)
    cx = rng.uniform(0, w, n_regions)
    yy, xx = np.mgrid[0:h, 0:w]
    d = (yy[None] - cy[:, None, None]) ** 2 + (xx[None] - cx[:, None, None]) ** 2
    return rng.standard_normal(n_regions)[np.argmin(d, axis=0)]


def _edges(rng, h, w, n_edges):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    out = np.zeros((h, w))
    for _ in range(n_edges):
        theta = rng.uniform(0, np.pi)
        off = rng.uniform(-0.3, 0.3) * (h + w) / 2
        d = (xx - w / 2) * np.cos(theta) + (yy - h / 2) * np.sin(theta) - off
        out += rng.standard_normal() * (d > 0)
    return out


def synth_scene(seed, C, H, W):
    """Low-rank reflectance cube in [0, 1].

    R = min(C, 4) abundance maps (smooth texture, piecewise-constant regions and
    straight edges, softmax-normalised so they sum to one) are mixed by a random
    C x R matrix with entries in [0, 1]. Every pixel is a convex combination of
    the endmember spectra, so the range holds without clipping and the band
    matrix has rank at most R.
    """
    if C < 1 or H < 16 or W < 16:
        raise ContractViolation(f"synth_scene: need C >= 1 and H, W >= 16, got {C}x{H}x{W}")
    rng = philox(seed, 0x5CE1E)
    r = min(C, 4)
    logits = np.stack(
        [
            1.5 * _smooth_field(rng, H, W, rng.integers(4, 12))
            + 1.5 * _regions(rng, H, W, int(rng.integers(3, 9)))
            + 1.0 * _edges(rng, H, W, int(rng.integers(1, 4)))
            + 0.3 * _smooth_field(rng, H, W, 2)
            for _ in range(r)
        ]
    )
    logits -= logits.max(axis=0, keepdims=True)
    ab = np.exp(logits)
    ab /= ab.sum(axis=0, keepdims=True)
    # smooth endmember spectra
    bands = np.linspace(0, 1, C)
    centres = rng.uniform(0, 1, r)
    widths = rng.uniform(0.2, 0.8, r)
    amps = rng.uniform(0.3, 1.0, r)
    base = rng.uniform(0.0, 0.2, r)
    spectra = base[None] + (amps - base)[None] * np.exp(-((bands[:, None] - centres[None]) ** 2) / (2 * widths**2))
    return np.tensordot(spectra, ab, axes=(1, 0))


def default_alpha(C):
    """Smooth bump over the first ceil(2C/3) bands, normalised to sum 1."""
    m = max(1, math.ceil(2 * C / 3))
    a = np.zeros(C)
    a[:m] = np.sin(np.pi * (np.arange(m) + 0.5) / m)
    return a / a.sum()


def pan_from_spectral(gt, alpha):
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (gt.shape[0],):
        raise ContractViolation(f"pan_from_spectral: alpha has {alpha.shape}, cube has {gt.shape[0]} bands")
    if np.any(alpha < 0) or not np.any(alpha > 0):
        raise ContractViolation("pan_from_spectral: alpha must be nonnegative and not all zero")
    return np.tensordot(alpha, gt, axes=(0, 0))[None]


def wald_degrade(gt, s, sigma_noise, seed, sigma_b=None):
    """Blur (sigma_b = s/2 unless given), decimate by s, add noise of std sigma_noise/255."""
    sb = s / 2.0 if sigma_b is None else sigma_b
    low = decimate(gaussian_blur(np.asarray(gt, dtype=np.float64), sb), s)
    if sigma_noise > 0:
        low = low + philox(seed, 0x4015E).normal(0.0, sigma_noise / 255.0, size=low.shape)
    return low


def split_counts(n):
    n_val = int(round(0.15 * n))
    n_test = int(round(0.15 * n))
    return n - n_val - n_test, n_val, n_test


def make_sample(entry, meta):
    c, patch, s = meta["channels"], meta["patch"], meta["s"]
    scene = synth_scene(entry["scene_seed"], c, 2 * patch, 2 * patch)
    oy, ox = entry["crop"]
    gt = scene[:, oy : oy + patch, ox : ox + patch].copy()
    pan = pan_from_spectral(gt, meta["alpha"])
    low = wald_degrade(gt, s, meta["sigma"], entry["noise_seed"], meta["sigma_b"])
    return FusionSample(gt, pan, low, s, meta["sigma"], entry["id"])


def make_dataset(root, samples=20, counts=None, channels=4, patch=32, s=4, sigma=0.0, seed=0, alpha=None):
    """Write train/val/test triples under ``root`` and return the manifest dict."""
    if counts is None:
        counts = split_counts(samples)
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or counts[0] < 4 or counts[1] < 1 or counts[2] < 1:
        raise ContractViolation(f"make_dataset: split counts must be at least (4, 1, 1), got {counts}")
    if patch % s:
        raise ContractViolation(f"make_dataset: patch {patch} is not divisible by s={s}")
    alpha = default_alpha(channels) if alpha is None else np.asarray(alpha, dtype=np.float64)
    meta = {
        "generator": GENERATOR_VERSION,
        "seed": int(seed),
        "channels": int(channels),
        "patch": int(patch),
        "s": int(s),
        "sigma": float(sigma),
        "sigma_b": s / 2.0,
        "alpha": [float(a) for a in alpha],
    }
    rng = philox(seed, 0xDA7A)
    splits = {}
    idx = 0
    for name, n in zip(SPLITS, counts):
        entries = []
        for _ in range(n):
            scene_seed, noise_seed = (int(x) for x in rng.integers(0, 2**31 - 1, size=2))
            crop = [int(x) for x in rng.integers(0, patch + 1, size=2)]
            entries.append({"id": f"sample_{idx:04d}", "scene_seed": scene_seed, "noise_seed": noise_seed, "crop": crop})
            idx += 1
        splits[name] = entries
    manifest = dict(meta, splits=splits)
    for name, entries in splits.items():
        for entry in entries:
            smp = make_sample(entry, manifest)
            d = ensure_dir(os.path.join(root, name, entry["id"]))
            save_ten(os.path.join(d, "gt.ten"), smp.gt)
            save_ten(os.path.join(d, "pan.ten"), smp.pan)
            save_ten(os.path.join(d, "lowres.ten"), smp.lowres)
    save_manifest(root, manifest)
    return manifest


def save_manifest(root, manifest):
    ensure_dir(root)
    path = os.path.join(root, "manifest.json")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}") from exc


def load_manifest(root):
    path = os.path.join(root, "manifest.json")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataIOError(f"dataset manifest not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc


def load_split(root, split, manifest=None):
    manifest = manifest or load_manifest(root)
    if split not in manifest["splits"]:
        raise DataIOError(f"{root}: split {split!r} not in manifest")
    out = []
    for entry in manifest["splits"][split]:
        d = os.path.join(root, split, entry["id"])
        out.append(
            FusionSample(
                load_ten(os.path.join(d, "gt.ten")),
                load_ten(os.path.join(d, "pan.ten")),
                load_ten(os.path.join(d, "lowres.ten")),
                manifest["s"],
                manifest["sigma"],
                entry["id"],
            )
        )
    return out


def export_png(cube, bands, path, lo_pct=2.0, hi_pct=98.0, gamma=2.2):
    """Per-band percentile stretch, gamma correction, 8-bit RGB PNG."""
    from PIL import Image

    cube = np.asarray(cube, dtype=np.float64)
    if cube.ndim == 2:
        cube = cube[None]
    if len(bands) != 3 or any(not 0 <= b < cube.shape[0] for b in bands):
        raise ContractViolation(f"export_png: bands {bands} invalid for a cube with {cube.shape[0]} bands")
    rgb = np.stack([stretch(cube[b], lo_pct, hi_pct) for b in bands], axis=-1)
    img = np.round(255.0 * rgb ** (1.0 / gamma)).astype(np.uint8)
    try:
        Image.fromarray(img, "RGB").save(path)
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc
    return img


def stretch(band, lo_pct=2.0, hi_pct=98.0):
    lo, hi = np.percentile(band, [lo_pct, hi_pct])
    if hi <= lo:
        return np.full(band.shape, 0.5)
    return np.clip((band - lo) / (hi - lo), 0.0, 1.0)
