"""Learned multi-step down/upsampling operators with PAN geometry injection.

A sampling factor s = q1*q2*...*qM (ascending primes) is processed in M steps:
downsampling consumes the primes in descending order (3x3 conv, then decimation),
upsampling in ascending order (transposed conv with kernel q+2, stride q, padding 1,
then geometry injection with the PAN level of matching resolution), followed by a
final 3x3 conv.
"""
import numpy as np

from .autodiff import Tensor, concat, mean, relu
from .autodiff.nn import BatchNorm2d, Conv2d, ConvTranspose2d, Module
from .errors import ContractViolation
from .imaging import bicubic_resample, prime_decomposition, t_decimate

# relative size of the random perturbation added to the smooth initial kernels
INIT_NOISE = 0.1


def _binomial3():
    k = np.array([1.0, 2.0, 1.0])
    return np.outer(k, k) / 16.0


def _identity3():
    k = np.zeros((3, 3))
    k[1, 1] = 1.0
    return k


def _tent(q, k):
    c = (k - 1) / 2.0
    f = np.maximum(0.0, 1.0 - np.abs(np.arange(k) - c) / q)
    return np.outer(f, f)


def _seed_depthwise(param, kernel, rng, transposed=False):
    """Overwrite a square conv weight with a per-channel kernel plus fan-in scaled noise."""
    w = param.data
    c = w.shape[0]
    fan_in = w[0].size if not transposed else w.shape[0] * w.shape[2] * w.shape[3]
    new = rng.normal(0.0, INIT_NOISE * np.sqrt(2.0 / fan_in), size=w.shape)
    for i in range(c):
        new[i, i] += kernel
    param.data = new.astype(w.dtype)


class DownOp(Module):
    def __init__(self, channels, s, rng, dtype=np.float32):
        super().__init__()
        self.s = s
        self.primes = prime_decomposition(s)
        self.order = sorted(self.primes, reverse=True)
        n_steps = max(1, len(self.order))
        self.convs = [Conv2d(channels, channels, 3, rng, dtype=dtype) for _ in range(n_steps)]
        for conv in self.convs:
            _seed_depthwise(conv.weight, _binomial3(), rng)

    def forward(self, x, return_levels=False):
        h, w = x.shape[-2:]
        if h % self.s or w % self.s:
            raise ContractViolation(f"down_forward: input {x.shape} is not divisible by s={self.s}")
        levels = []
        if not self.order:
            x = self.convs[0](x)
        for conv, q in zip(self.convs, self.order):
            x = t_decimate(conv(x), q)
            levels.append(x)
        if return_levels:
            return x, levels[:-1]
        return x


class GeometryInjection(Module):
    """x + BN(conv(ReLU(BN(conv(ReLU(BN(conv([x, pan]))))))))."""

    def __init__(self, channels, rng, dtype=np.float32):
        super().__init__()
        self.conv1 = Conv2d(channels + 1, channels, 3, rng, bias=False, dtype=dtype)
        self.bn1 = BatchNorm2d(channels, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, bias=False, dtype=dtype)
        self.bn2 = BatchNorm2d(channels, dtype=dtype)
        self.conv3 = Conv2d(channels, channels, 3, rng, bias=False, dtype=dtype)
        # zero scale on the last norm: the injection starts as the identity
        self.bn3 = BatchNorm2d(channels, gamma=0.0, dtype=dtype)

    def forward(self, x, pan_level):
        if x.shape[-2:] != pan_level.shape[-2:] or x.shape[0] != pan_level.shape[0]:
            raise ContractViolation(
                f"geometry_injection: features {x.shape} and PAN level {pan_level.shape} are not aligned"
            )
        z = concat([x, pan_level], axis=1)
        z = relu(self.bn1(self.conv1(z)))
        z = relu(self.bn2(self.conv2(z)))
        z = self.bn3(self.conv3(z))
        return x + z


class UpOp(Module):
    """``adjoint_gain`` seeds each step as the adjoint of decimation (tent / q^2) rather than
    as an interpolator (tent), which is the right scale when Up stands in for (DB)^T."""

    def __init__(self, channels, s, rng, dtype=np.float32, adjoint_gain=False):
        super().__init__()
        self.s = s
        self.primes = prime_decomposition(s)
        self.tconvs = [
            ConvTranspose2d(channels, channels, q + 2, q, 1, rng, dtype=dtype) for q in self.primes
        ]
        for tc, q in zip(self.tconvs, self.primes):
            scale = 1.0 / (q * q) if adjoint_gain else 1.0
            _seed_depthwise(tc.weight, scale * _tent(q, q + 2), rng, transposed=True)
        self.injections = [GeometryInjection(channels, rng, dtype) for _ in self.primes]
        self.final = Conv2d(channels, channels, 3, rng, dtype=dtype)
        _seed_depthwise(self.final.weight, _identity3(), rng)

    def expected_levels(self, h, w):
        """Spatial sizes of the PAN levels consumed, in consumption order."""
        sizes = []
        for q in self.primes:
            h, w = h * q, w * q
            sizes.append((h, w))
        return sizes

    def forward(self, x, pyramid):
        m = len(self.primes)
        expected = self.expected_levels(*x.shape[-2:])
        if len(pyramid) != m or any(
            pyramid[m - 1 - i].shape[-2:] != expected[i] for i in range(m)
        ):
            got = [tuple(p.shape[-2:]) for p in reversed(pyramid)]
            raise ContractViolation(
                f"up_forward: PAN levels (coarse to fine) must have sizes {expected}, got {got}"
            )
        for i, (tconv, inject) in enumerate(zip(self.tconvs, self.injections)):
            x = inject(tconv(x), pyramid[m - 1 - i])
        return self.final(x)


def learned_pyramid(down0, pan_rep):
    """PAN levels P_0..P_{M-1} from the learned Down^0 steps (channel mean -> one band)."""
    _, levels = down0(pan_rep, return_levels=True)
    return [mean(pan_rep, axis=1, keepdims=True)] + [mean(lv, axis=1, keepdims=True) for lv in levels]


def fixed_pyramid(pan, s):
    """Non-learned PAN levels built with bicubic reduction per prime step (arrays)."""
    levels = [pan]
    for q in sorted(prime_decomposition(s), reverse=True)[:-1]:
        levels.append(bicubic_resample(levels[-1], q, "down"))
    return levels


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
