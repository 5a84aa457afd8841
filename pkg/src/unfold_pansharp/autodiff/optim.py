"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, TrainingDivergenceError

DEFAULT_LR = 5e-4


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = DEFAULT_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    names: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=None, names=None, **hyper):
        lr = DEFAULT_LR if lr is None else lr
        if lr <= 0:
            raise ContractViolation(f"adam: learning rate must be positive, got {lr}")
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            names=list(names) if names is not None else [f"param{i}" for i in range(len(params))],
            **hyper,
        )


def adam_step(params, grads, state):
    """One Adam update. ``params``/``grads`` are arrays; returns new parameter arrays."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ContractViolation("adam_step: params, grads and state sizes differ")
    for name, g in zip(state.names, grads):
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ContractViolation(f"adam_step: {state.names[i]} has shape {p.shape} but gradient {g.shape}")
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append((p - state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype))
    return out


class Adam:
    def __init__(self, named_params, lr=None, **hyper):
        named_params = list(named_params)
        self.params = [p for _, p in named_params]
        self.state = AdamState.for_params(
            [p.data for p in self.params], lr=lr, names=[n for n, _ in named_params], **hyper
        )

    def step(self):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new = adam_step([p.data for p in self.params], grads, self.state)
        for p, d in zip(self.params, new):
            p.data = d
            p.grad = None
