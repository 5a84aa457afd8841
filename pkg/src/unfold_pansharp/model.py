"""Unfolded primal-dual network.

Every stage mirrors one primal-dual iteration with DB replaced by a learned Down,
its adjoint by a learned Up (with PAN geometry injection) and the prior prox by a
MARNet. The positive scalars lambda, beta, tau_p, tau_d are shared by all stages.
"""
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .autodiff import Tensor, clip_symmetric, linear_map, softplus
from .autodiff.nn import Module
from .autodiff.tensor import DTYPES
from .errors import ConfigError, ContractViolation, DataIOError, NumericalError, VersionError
from .imaging import t_bicubic, t_blur, t_blur_adjoint, t_decimate, t_zero_insert
from .marnet import VARIANTS, AttentionConfig, MARNet
from .sampling import DownOp, UpOp, as_tensor, learned_pyramid
from .solver import prox_quadratic_prior
from .tenfile import ensure_dir, load_ten, save_ten

SCALAR_NAMES = ("lam", "beta", "tau_p", "tau_d")
SCALAR_INIT = {"lam": 1.0, "beta": 0.1, "tau_p": 0.5, "tau_d": 0.5}
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 4
    s: int = 4
    stages: int = 4
    variant: int = 6
    radius: int = 5
    embed_dim: int = 16
    patch_kernel: int = 3
    features: int = 32
    dtype: str = "f32"

    def __post_init__(self):
        checks = [
            ("channels", self.channels >= 1, "must be >= 1"),
            ("s", self.s >= 1, "must be >= 1"),
            ("stages", self.stages >= 1, "must be >= 1"),
            ("variant", self.variant in VARIANTS, "must be in 1..6"),
            ("radius", self.radius >= 0, "must be >= 0"),
            ("embed_dim", self.embed_dim >= 1, "must be >= 1"),
            ("patch_kernel", self.patch_kernel >= 1 and self.patch_kernel % 2 == 1, "must be odd"),
            ("features", self.features >= 1, "must be >= 1"),
            ("dtype", self.dtype in DTYPES, f"must be one of {sorted(DTYPES)}"),
        ]
        for name, ok, msg in checks:
            if not ok:
                raise ConfigError(f"model.{name} {msg}, got {getattr(self, name)!r}")

    @property
    def attention(self):
        return AttentionConfig(self.radius, self.embed_dim, self.patch_kernel, self.features)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d, path="model"):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{path}.{unknown[0]}: unknown key")
        return cls(**d)

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class PDTensors:
    u: Tensor
    u_bar: Tensor
    t: Tensor
    v: Tensor


@dataclass
class Init:
    P_hat: Tensor
    H_hat: Tensor
    state: PDTensors
    pyramid: list
    pan_rep: Tensor


@dataclass
class StageTrace:
    stages: list = field(default_factory=list)
    out: Tensor = None


def inv_softplus(y):
    return y + math.log(-math.expm1(-y))


class Stage(Module):
    def __init__(self, cfg, rng, dtype):
        super().__init__()
        self.down = DownOp(cfg.channels, cfg.s, rng, dtype)
        self.up = UpOp(cfg.channels, cfg.s, rng, dtype, adjoint_gain=True)
        self.prox = MARNet(cfg.channels, cfg.attention, cfg.variant, rng, dtype)


def _check_finite(x, name):
    if not np.all(np.isfinite(x.data)):
        raise NumericalError(f"stage_forward: non-finite values after the {name} update")
    return x


def stage_forward(state, stage, scalars, Y, P, P_hat, H_hat, pyramid):
    """One unfolded iteration. ``stage`` supplies ``down(x)``, ``up(x, pyramid)`` and ``prox(x, pan)``."""
    lam, beta, tau_p, tau_d = (scalars[k] for k in SCALAR_NAMES)
    t = (state.t + tau_d * stage.down(state.u_bar) - tau_d * Y) / (1.0 + tau_d / lam)
    _check_finite(t, "t")
    v = clip_symmetric(state.v + tau_d * P_hat * state.u_bar - tau_d * P * H_hat, beta)
    _check_finite(v, "v")
    u = stage.prox(state.u - tau_p * stage.up(t, pyramid) - tau_p * P_hat * v, P)
    _check_finite(u, "u")
    u_bar = 2.0 * u - state.u
    return PDTensors(u=u, u_bar=u_bar, t=t, v=v), u


class UnfoldedModel(Module):
    def __init__(self, cfg: ModelConfig, seed=0):
        super().__init__()
        self.cfg = cfg
        dtype = DTYPES[cfg.dtype]
        rng = np.random.default_rng(seed)
        self.down0 = DownOp(cfg.channels, cfg.s, rng, dtype)
        self.up0 = UpOp(cfg.channels, cfg.s, rng, dtype)
        self.stages = [Stage(cfg, rng, dtype) for _ in range(cfg.stages)]
        self.post = MARNet(cfg.channels, cfg.attention, cfg.variant, rng, dtype)
        self.raw_scalars = [
            Tensor(np.full((1, 1, 1, 1), inv_softplus(SCALAR_INIT[k]), dtype=dtype), requires_grad=True)
            for k in SCALAR_NAMES
        ]

    def scalars(self):
        return {k: softplus(r) for k, r in zip(SCALAR_NAMES, self.raw_scalars)}

    def scalar_values(self):
        return {k: float(v.data.reshape(-1)[0]) for k, v in self.scalars().items()}

    def check_inputs(self, Y, P):
        s, c = self.cfg.s, self.cfg.channels
        if Y.ndim != 4 or Y.shape[1] != c:
            raise ContractViolation(f"initialize: low-res input must be (N, {c}, h, w), got {Y.shape}")
        n, _, h, w = Y.shape
        if P.shape != (n, 1, h * s, w * s):
            raise ContractViolation(
                f"initialize: PAN must be {(n, 1, h * s, w * s)} for low-res {Y.shape} and s={s}, got {P.shape}"
            )

    def initialize(self, Y, P):
        Y, P = as_tensor(Y), as_tensor(P)
        self.check_inputs(Y, P)
        c = self.cfg.channels
        pan_rep = P if c == 1 else P * Tensor(np.ones((1, c, 1, 1), dtype=P.dtype))
        pyramid = learned_pyramid(self.down0, pan_rep)
        P_hat = self.up0(self.down0(pan_rep), pyramid)
        H_hat = self.up0(Y, pyramid)
        u0 = t_bicubic(Y, self.cfg.s, "up")
        t0 = self.down0(u0)
        v0 = u0 * P_hat
        return Init(P_hat, H_hat, PDTensors(u0, u0, t0, v0), pyramid, pan_rep)

    def forward(self, Y, P, scalars=None):
        Y, P = as_tensor(Y), as_tensor(P)
        init = self.initialize(Y, P)
        scalars = scalars or self.scalars()
        trace = StageTrace()
        state = init.state
        for stage in self.stages:
            state, u = stage_forward(state, stage, scalars, Y, P, init.P_hat, init.H_hat, init.pyramid)
            trace.stages.append(u)
        trace.out = self.post(trace.stages[-1], P)
        return trace


class AnalyticOps:
    """Stage operators pinned to the classical ones: Down = DB, Up = (DB)^T, prox = quadratic prior prox."""

    def __init__(self, s, tau_p, mu, sigma_b=None):
        self.s = s
        self.sigma = s / 2.0 if sigma_b is None else sigma_b
        self.tau_p = tau_p
        self.mu = mu

    def down(self, x):
        return t_decimate(t_blur(x, self.sigma), self.s)

    def up(self, x, pyramid=None):
        return t_blur_adjoint(t_zero_insert(x, self.s), self.sigma)

    def prox(self, x, pan=None):
        # the prox of a quadratic is linear and self-adjoint
        def solve(a):
            return prox_quadratic_prior(a, self.tau_p, self.mu)

        return linear_map(x, solve, solve, "prox_quadratic")


def model_forward(model, Y, P):
    return model(Y, P)


def param_init(cfg, seed=0):
    if isinstance(cfg, dict):
        cfg = ModelConfig.from_dict(cfg)
    return UnfoldedModel(cfg, seed)


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(model, path, epoch=0, best_val_psnr=None, extra=None):
    ensure_dir(path)
    state = model.state_dict()
    names = sorted(state)
    for name in names:
        save_ten(os.path.join(path, f"{name}.ten"), state[name])
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "config_hash": model.cfg.hash(),
        "scalars": model.scalar_values(),
        "stages": model.cfg.stages,
        "variant": model.cfg.variant,
        "epoch": epoch,
        "best_val_psnr": best_val_psnr,
        "tensors": names,
    }
    if extra:
        manifest.update(extra)
    tmp = os.path.join(path, "manifest.json.tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        os.replace(tmp, os.path.join(path, "manifest.json"))
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint manifest in {path}: {exc.strerror}") from exc
    return manifest


def read_manifest(path):
    mpath = os.path.join(path, "manifest.json")
    try:
        with open(mpath, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise DataIOError(f"checkpoint manifest not found: {mpath}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise DataIOError(f"cannot read checkpoint manifest {mpath}: {exc}") from exc


def load_checkpoint(path, cfg=None):
    """Rebuild a model from a checkpoint; ``cfg`` (if given) must hash to the stored config."""
    manifest = read_manifest(path)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise VersionError(f"checkpoint {path}: format {manifest.get('format')} unsupported")
    stored = ModelConfig.from_dict(manifest["config"], "checkpoint.config")
    if stored.hash() != manifest.get("config_hash"):
        raise VersionError(f"checkpoint {path}: manifest config does not match its recorded hash")
    if cfg is not None and cfg.hash() != stored.hash():
        raise VersionError(
            f"checkpoint {path}: config hash {stored.hash()} does not match model config hash {cfg.hash()}"
        )
    model = UnfoldedModel(stored)
    state = {name: load_ten(os.path.join(path, f"{name}.ten")) for name in manifest["tensors"]}
    try:
        model.load_state_dict(state)
    except KeyError as exc:
        raise VersionError(f"checkpoint {path}: {exc.args[0]}") from None
    return model, manifest
