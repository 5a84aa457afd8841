"""Small experiment drivers: MARNet variant comparison on guided denoising, and the
sampling-factor / noise-level sweeps of the full pipeline."""
import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Adam, Tensor, l1_loss, no_grad
from .baselines import bicubic
from .data import make_dataset, load_split, pan_from_spectral, default_alpha, philox, synth_scene
from .marnet import AttentionConfig, MARNet, PlainResNet
from .metrics import psnr
from .model import ModelConfig, UnfoldedModel
from .training import TrainConfig, finetune_post, train


@dataclass(frozen=True)
class DenoiseConfig:
    channels: int = 4
    size: int = 24
    n_train: int = 48
    n_val: int = 6
    sigma: float = 25.0
    features: int = 16
    radius: int = 2
    embed_dim: int = 8
    epochs: int = 40
    batch_size: int = 4
    lr: float = 5e-4
    seed: int = 0


def denoise_data(cfg):
    """Noisy cubes with a clean PAN guide: (noisy, pan, clean) arrays per split."""
    alpha = default_alpha(cfg.channels)
    out = []
    for split, n in (("train", cfg.n_train), ("val", cfg.n_val)):
        gts = np.stack([synth_scene(cfg.seed * 7919 + i + (0 if split == "train" else 10**6), cfg.channels,
                                    cfg.size, cfg.size) for i in range(n)])
        pans = np.stack([pan_from_spectral(g, alpha) for g in gts])
        noise = philox(cfg.seed, 0xDE, 0 if split == "train" else 1).normal(0, cfg.sigma / 255.0, gts.shape)
        out.append(((gts + noise).astype(np.float32), pans.astype(np.float32), gts.astype(np.float32)))
    return out


def _val_psnr(net, val):
    net.eval()
    with no_grad():
        pred = net(Tensor(val[0]), Tensor(val[1])).data.astype(np.float64)
    net.train()
    return float(np.mean([psnr(p, g) for p, g in zip(pred, val[2])]))


def fit_denoiser(net, train_data, val_data, cfg):
    """Adam on L1; returns the best validation PSNR over epochs."""
    opt = Adam(net.named_parameters(), lr=cfg.lr)
    rng = philox(cfg.seed, 0xF17)
    x, p, y = train_data
    best = -np.inf
    for _ in range(cfg.epochs):
        order = rng.permutation(len(x))
        for i in range(0, len(x), cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            loss = l1_loss(net(Tensor(x[idx]), Tensor(p[idx])), Tensor(y[idx]))
            loss.backward()
            opt.step()
        best = max(best, _val_psnr(net, val_data))
    return best


def variant_harness(cfg=None, variants=(1, 2, 3, 4, 5, 6, "plain")):
    """Best validation PSNR per MARNet variant (and the plain ResNet) on guided denoising."""
    cfg = cfg or DenoiseConfig()
    train_data, val_data = denoise_data(cfg)
    att = AttentionConfig(radius=cfg.radius, embed_dim=cfg.embed_dim, patch_kernel=3, features=cfg.features)
    out = {"noisy": float(np.mean([psnr(a, b) for a, b in zip(val_data[0], val_data[2])]))}
    for v in variants:
        rng = np.random.default_rng(cfg.seed)
        if v == "plain":
            net = PlainResNet(cfg.channels, cfg.features, rng)
        else:
            net = MARNet(cfg.channels, att, v, rng)
        out[v] = fit_denoiser(net, train_data, val_data, cfg)
    return out


@dataclass(frozen=True)
class SweepConfig:
    channels: int = 4
    patch: int = 24
    counts: tuple = (16, 4, 4)
    stages: int = 2
    features: int = 8
    radius: int = 1
    embed_dim: int = 8
    epochs: int = 30
    finetune_epochs: int = 0
    lr: float = 5e-4
    seed: int = 0


@dataclass
class SweepRun:
    s: int
    sigma: float
    val_psnr: float
    bicubic_psnr: float
    seconds: float
    log: list = field(default_factory=list)


def pipeline_run(root, s, sigma, cfg=None):
    """Generate data, train (and optionally fine-tune) a small unfolded model, return val PSNR."""
    cfg = cfg or SweepConfig()
    t0 = time.perf_counter()
    make_dataset(root, counts=cfg.counts, channels=cfg.channels, patch=cfg.patch, s=s, sigma=sigma, seed=cfg.seed)
    tr, va = load_split(root, "train"), load_split(root, "val")
    mcfg = ModelConfig(channels=cfg.channels, s=s, stages=cfg.stages, radius=cfg.radius,
                       embed_dim=cfg.embed_dim, features=cfg.features)
    model = UnfoldedModel(mcfg, seed=cfg.seed)
    tcfg = TrainConfig(epochs=cfg.epochs, finetune_epochs=cfg.finetune_epochs, lr=cfg.lr, seed=cfg.seed)
    res = train(model, tr, va, tcfg)
    best = res.best_val_psnr
    if cfg.finetune_epochs:
        best = finetune_post(model, tr, va, tcfg).best_val_psnr
    bic = float(np.mean([psnr(bicubic(x.lowres, x.pan, s), x.gt) for x in va]))
    return SweepRun(s, sigma, best, bic, time.perf_counter() - t0, res.log)
