"""Multi-head attention residual network (MARNet) and its ablation variants.

Variants 1-6 differ in where feature extraction is applied before attention
(input: 1, 4; PAN: 2, 5; both: 3, 6) and whether the residual blocks receive the
attention output concatenated with the input features (4-6).
"""
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, relu, softmax, window_apply, window_logits
from .autodiff.nn import Conv2d, Module
from .errors import ContractViolation

VARIANTS = {
    1: ("input", False),
    2: ("pan", False),
    3: ("both", False),
    4: ("input", True),
    5: ("pan", True),
    6: ("both", True),
}


@dataclass(frozen=True)
class AttentionConfig:
    radius: int = 5
    embed_dim: int = 16
    patch_kernel: int = 3
    features: int = 32

    def __post_init__(self):
        if self.radius < 0 or self.embed_dim < 1 or self.features < 1 or self.patch_kernel % 2 == 0:
            raise ContractViolation(f"invalid attention config {self}")


def attention_weights(qemb, kemb, radius):
    """Softmax-normalised window weights (N, (2r+1)^2, H, W) from query/key embeddings."""
    if qemb.shape != kemb.shape:
        raise ContractViolation(f"attention_weights: query {qemb.shape} and key {kemb.shape} differ")
    return softmax(window_logits(qemb, kemb, radius), axis=1)


def windowed_average(value, weights, radius):
    if value.shape[-2:] != weights.shape[-2:]:
        raise ContractViolation(f"head_attention: values {value.shape} and weights {weights.shape} differ")
    return window_apply(weights, value, radius)


class HeadAttention(Module):
    """Nonlocal filter of a value map, weights from theta/phi embeddings of an auxiliary map."""

    def __init__(self, aux_channels, value_channels, cfg, rng, dtype=np.float32):
        super().__init__()
        self.radius = cfg.radius
        # no bias on the key embedding: it would only shift every logit of a row equally
        gain = cfg.embed_dim**-0.25
        self.theta = Conv2d(aux_channels, cfg.embed_dim, cfg.patch_kernel, rng, gain=gain, dtype=dtype)
        self.phi = Conv2d(aux_channels, cfg.embed_dim, cfg.patch_kernel, rng, bias=False, gain=gain, dtype=dtype)
        self.value = Conv2d(value_channels, value_channels, 1, rng, dtype=dtype)

    def weights(self, aux):
        return attention_weights(self.theta(aux), self.phi(aux), self.radius)

    def forward(self, value, aux):
        return windowed_average(self.value(value), self.weights(aux), self.radius)


class MultiHeadAttention(Module):
    def __init__(self, value_channels, pan_channels, cfg, rng, dtype=np.float32):
        super().__init__()
        vc, pc = value_channels, pan_channels
        self.heads = [
            HeadAttention(vc, vc, cfg, rng, dtype),
            HeadAttention(pc, vc, cfg, rng, dtype),
            HeadAttention(vc + pc, vc, cfg, rng, dtype),
        ]
        self.mlp1 = Conv2d(3 * vc, cfg.features, 1, rng, dtype=dtype)
        self.mlp2 = Conv2d(cfg.features, cfg.features, 1, rng, dtype=dtype)

    def forward(self, x_feat, pan_feat):
        if x_feat.shape[-2:] != pan_feat.shape[-2:]:
            raise ContractViolation(
                f"multi_head_attention: features {x_feat.shape} and PAN features {pan_feat.shape} differ"
            )
        both = concat([x_feat, pan_feat], axis=1)
        outs = [
            self.heads[0](x_feat, x_feat),
            self.heads[1](x_feat, pan_feat),
            self.heads[2](x_feat, both),
        ]
        return self.mlp2(relu(self.mlp1(concat(outs, axis=1))))


class ResBlock(Module):
    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        # small residual branch at init keeps the trunk at input scale (no normalisation here)
        self.conv2 = Conv2d(channels, channels, 3, rng, gain=0.1, dtype=dtype)

    def forward(self, x):
        return x + self.conv2(relu(self.conv1(x)))


class MARNet(Module):
    def __init__(self, channels, cfg=None, variant=6, rng=None, dtype=np.float32, out_gain=0.1):
        super().__init__()
        if variant not in VARIANTS:
            raise ContractViolation(f"MARNet variant must be in 1..6, got {variant}")
        cfg = cfg or AttentionConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.variant = variant
        source, self.concat_skip = VARIANTS[variant]
        f = cfg.features
        self.fe_x = Conv2d(channels, f, 3, rng, dtype=dtype) if source in ("input", "both") else None
        self.fe_p = Conv2d(1, f, 3, rng, dtype=dtype) if source in ("pan", "both") else None
        xc = f if self.fe_x is not None else channels
        pc = f if self.fe_p is not None else 1
        self.mha = MultiHeadAttention(xc, pc, cfg, rng, dtype)
        width = f + xc if self.concat_skip else f
        self.res = [ResBlock(width, rng, dtype) for _ in range(3)]
        self.out1 = Conv2d(f + width, f, 3, rng, dtype=dtype)
        self.out2 = Conv2d(f, channels, 3, rng, gain=out_gain, dtype=dtype)

    def features(self, x, pan):
        x_feat = relu(self.fe_x(x)) if self.fe_x is not None else x
        pan_feat = relu(self.fe_p(pan)) if self.fe_p is not None else pan
        return x_feat, pan_feat

    def forward(self, x, pan):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ContractViolation(f"marnet_forward: expected (N, {self.channels}, H, W), got {x.shape}")
        if pan.shape[0] != x.shape[0] or pan.shape[1] != 1 or pan.shape[-2:] != x.shape[-2:]:
            raise ContractViolation(f"marnet_forward: PAN {pan.shape} does not match input {x.shape}")
        x_feat, pan_feat = self.features(x, pan)
        att = self.mha(x_feat, pan_feat)
        z = concat([att, x_feat], axis=1) if self.concat_skip else att
        for block in self.res:
            z = block(z)
        z = self.out2(relu(self.out1(concat([att, z], axis=1))))
        return x + z


class PlainResNet(Module):
    """Ablation baseline: conv features, three residual blocks, two output convs, residual add."""

    def __init__(self, channels, features=32, rng=None, dtype=np.float32, out_gain=0.1):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fe = Conv2d(channels, features, 3, rng, dtype=dtype)
        self.res = [ResBlock(features, rng, dtype) for _ in range(3)]
        self.out1 = Conv2d(features, features, 3, rng, dtype=dtype)
        self.out2 = Conv2d(features, channels, 3, rng, gain=out_gain, dtype=dtype)

    def forward(self, x, pan=None):
        z = relu(self.fe(x))
        for block in self.res:
            z = block(z)
        return x + self.out2(relu(self.out1(z)))

