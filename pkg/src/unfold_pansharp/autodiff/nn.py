"""Parameter containers and layers built on the tensor primitives."""
import numpy as np

from . import tensor as T
from .tensor import Tensor


def fan_in_normal(rng, shape, fan_in, gain=1.0, dtype=np.float32):
    std = gain * np.sqrt(2.0 / fan_in)
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


class Module:
    """Walks attributes to find parameters, sub-modules and buffers.

    Parameters are leaf tensors with ``requires_grad``; buffers live in ``self.buffers``
    (plain arrays, saved with checkpoints but never optimised).
    """

    training = True

    def __init__(self):
        self.buffers = {}

    def _children(self):
        for name, val in vars(self).items():
            if name == "buffers":
                continue
            if isinstance(val, (Tensor, Module)):
                yield name, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, val in self._children():
            full = f"{prefix}{name}"
            if isinstance(val, Module):
                yield from val.named_parameters(full + ".")
            elif val.is_leaf:
                yield full, val

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def modules(self):
        yield self
        for _, val in self._children():
            if isinstance(val, Module):
                yield from val.modules()

    def named_buffers(self, prefix=""):
        for key, arr in self.buffers.items():
            yield f"{prefix}{key}", arr
        for name, val in self._children():
            if isinstance(val, Module):
                yield from val.named_buffers(f"{prefix}{name}.")

    def state_dict(self):
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        params = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(params) | set(bufs)) - set(state)
        if missing:
            raise KeyError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.dtype)
        for name, b in bufs.items():
            b[...] = state[name]

    def train(self, mode=True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def requires_grad_(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def to(self, dtype):
        dtype = T.DTYPES.get(dtype, dtype)
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        for m in self.modules():
            for key in m.buffers:
                m.buffers[key] = m.buffers[key].astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin, cout, k=3, rng=None, stride=1, padding=None, bias=True, gain=1.0, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = fan_in_normal(rng, (cout, cin, k, k), cin * k * k, gain, dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(self, cin, cout, k, stride, padding, rng=None, bias=True, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        self.weight = fan_in_normal(rng, (cin, cout, k, k), cin * k * k, dtype=dtype)
        self.bias = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True) if bias else None

    def forward(self, x):
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, c, momentum=0.1, eps=1e-5, gamma=1.0, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.full(c, gamma, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.buffers["running_mean"] = np.zeros(c, dtype=dtype)
        self.buffers["running_var"] = np.ones(c, dtype=dtype)

    def forward(self, x):
        return T.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.buffers["running_mean"],
            self.buffers["running_var"],
            self.training,
            self.momentum,
            self.eps,
        )
