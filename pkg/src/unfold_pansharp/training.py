"""Two-phase training: full unfolded model, then the post-processing MARNet alone."""
import csv
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Adam, Tensor, l1_loss, mse_loss, no_grad
from .data import philox
from .errors import ConfigError, ContractViolation, DataIOError, TrainingDivergenceError
from .metrics import psnr
from .model import save_checkpoint


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    finetune_epochs: int = 10
    lr: float = 5e-4
    alpha: float = 0.1
    batch_size: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.finetune_epochs < 0:
            raise ConfigError(f"train.finetune_epochs must be >= 0, got {self.finetune_epochs}")
        if not self.lr > 0:
            raise ConfigError(f"train.lr must be > 0, got {self.lr}")
        if self.alpha < 0:
            raise ConfigError(f"train.alpha must be >= 0, got {self.alpha}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size must be >= 1, got {self.batch_size}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d, path="train"):
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ConfigError(f"{path}.{unknown[0]}: unknown key")
        return cls(**d)


@dataclass
class TrainResult:
    best_val_psnr: float
    best_epoch: int
    log: list = field(default_factory=list)


def loss_unfolded(trace, gt, alpha=0.1):
    """L1(U_out, GT) + alpha/N * sum_i MSE(U_i, GT)."""
    gt = gt if isinstance(gt, Tensor) else Tensor(gt, dtype=trace.out.dtype)
    if trace.out.shape != gt.shape:
        raise ContractViolation(f"loss_unfolded: output {trace.out.shape} and GT {gt.shape} differ")
    loss = l1_loss(trace.out, gt)
    n = len(trace.stages)
    if alpha > 0 and n:
        stage_sum = mse_loss(trace.stages[0], gt)
        for u in trace.stages[1:]:
            stage_sum = stage_sum + mse_loss(u, gt)
        loss = loss + (alpha / n) * stage_sum
    return loss


def stack(samples, dtype):
    gt = np.stack([smp.gt for smp in samples]).astype(dtype)
    pan = np.stack([smp.pan for smp in samples]).astype(dtype)
    low = np.stack([smp.lowres for smp in samples]).astype(dtype)
    return gt, pan, low


def predict(model, samples, batch_size=4):
    """Fused outputs (float64 arrays) in eval mode without building a graph."""
    dtype = model.raw_scalars[0].dtype
    was_training = model.training
    model.eval()
    out = []
    try:
        with no_grad():
            for i in range(0, len(samples), batch_size):
                _, pan, low = stack(samples[i : i + batch_size], dtype)
                out.extend(model(low, pan).out.data.astype(np.float64))
    finally:
        model.train(was_training)
    return out


def validation_psnr(model, samples, batch_size=4):
    preds = predict(model, samples, batch_size)
    return float(np.mean([psnr(p, smp.gt) for p, smp in zip(preds, samples)]))


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def write_log(path, log):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "train_loss", "val_psnr", "is_best"))
            for row in log:
                w.writerow((row["epoch"], repr(row["train_loss"]), repr(row["val_psnr"]), int(row["is_best"])))
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc.strerror}") from exc


def _set_mode(model, phase):
    # frozen parts keep their normalisation statistics during the finetune
    if phase == "finetune":
        model.eval()
        model.post.train()
    else:
        model.train()


def _fit(model, params, loss_fn, train_set, val_set, cfg, epochs, ckpt_dir, log_path, phase, start_best=-np.inf):
    if not train_set or not val_set:
        raise ContractViolation(f"{phase}: training and validation splits must be non-empty")
    opt = Adam(params, lr=cfg.lr)
    rng = philox(cfg.seed, 0x7A1 if phase == "train" else 0xF1E)
    dtype = model.raw_scalars[0].dtype
    best = start_best
    best_epoch = 0
    best_state = model.state_dict()
    log = []
    for epoch in range(1, epochs + 1):
        _set_mode(model, phase)
        losses = []
        for idx in _batches(len(train_set), cfg.batch_size, rng):
            gt, pan, low = stack([train_set[i] for i in idx], dtype)
            loss = loss_fn(model(low, pan), Tensor(gt))
            if not np.isfinite(loss.item()):
                model.load_state_dict(best_state)
                raise TrainingDivergenceError(
                    f"{phase}: non-finite loss at epoch {epoch}; best weights (epoch {best_epoch}) restored"
                )
            loss.backward()
            try:
                opt.step()
            except TrainingDivergenceError:
                model.load_state_dict(best_state)
                raise
            losses.append(loss.item())
        val = validation_psnr(model, val_set, cfg.batch_size)
        is_best = val > best
        if is_best:
            best, best_epoch = val, epoch
            best_state = model.state_dict()
            if ckpt_dir:
                save_checkpoint(model, ckpt_dir, epoch=epoch, best_val_psnr=val, extra={"phase": phase})
        log.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_psnr": val, "is_best": is_best})
        if log_path:
            write_log(log_path, log)
    model.load_state_dict(best_state)
    return TrainResult(best, best_epoch, log)


def train(model, train_set, val_set, cfg=None, ckpt_dir=None, log_path=None):
    cfg = cfg or TrainConfig()
    if ckpt_dir and log_path is None:
        log_path = os.path.join(ckpt_dir, "train_log.csv")
    return _fit(
        model,
        model.named_parameters(),
        lambda trace, gt: loss_unfolded(trace, gt, cfg.alpha),
        train_set,
        val_set,
        cfg,
        cfg.epochs,
        ckpt_dir,
        log_path,
        "train",
    )


def finetune_post(model, train_set, val_set, cfg=None, ckpt_dir=None, log_path=None):
    """Train only the post-processing MARNet with an L1 loss; everything else stays frozen.

    The pre-finetune validation PSNR is the starting best, so the selected weights are
    never worse on validation than the input model.
    """
    cfg = cfg or TrainConfig()
    if cfg.finetune_epochs == 0:
        return TrainResult(validation_psnr(model, val_set, cfg.batch_size), 0, [])
    if ckpt_dir and log_path is None:
        log_path = os.path.join(ckpt_dir, "finetune_log.csv")
    post = [(f"post.{n}", p) for n, p in model.post.named_parameters()]
    post_ids = {id(p) for _, p in post}
    frozen = [p for p in model.parameters() if id(p) not in post_ids]
    for p in frozen:
        p.requires_grad = False
    try:
        start = validation_psnr(model, val_set, cfg.batch_size)
        return _fit(
            model,
            post,
            lambda trace, gt: l1_loss(trace.out, gt),
            train_set,
            val_set,
            cfg,
            cfg.finetune_epochs,
            ckpt_dir,
            log_path,
            "finetune",
            start_best=start,
        )
    finally:
        for p in frozen:
            p.requires_grad = True
