"""Dense tensors with an eager reverse-mode tape.

Each op result keeps references to its inputs and a closure mapping the output
gradient to input gradients. ``Tensor.backward`` walks that graph once in reverse
topological order and then releases it, so a graph can be differentiated once.
"""
from __future__ import annotations

import contextlib

import numpy as np

from .. import kernels
from ..errors import ContractViolation, DegenerateInputError

DIV_GUARD = 1e-12

_grad_enabled = True

DTYPES = {"f32": np.float32, "f64": np.float64}


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _as_float_array(data, dtype=None):
    if isinstance(dtype, str):
        dtype = DTYPES[dtype]
    arr = np.asarray(data)
    if dtype is not None:
        return arr.astype(dtype, copy=False)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- metadata ---------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op})"

    # -- differentiation -----------------------------------------------------
    def backward(self):
        if self.data.size != 1:
            raise ContractViolation(f"backward: loss must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractViolation("backward: loss does not depend on any differentiable tensor")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        for node in order:
            if node.is_leaf:
                node.grad = np.zeros_like(node.data)

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node.is_leaf:
                if g is not None:
                    node.grad += g
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

        for node in order:
            if not node.is_leaf:
                node._parents = ()
                node._backward = None

    # -- operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_lift(other, self), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data, parents, backward, op):
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractViolation(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _lift(b, a)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    b = _lift(b, a)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    b = _lift(b, a)
    _check_broadcast("mul", a, b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)), "mul"
    )


def div(a, b):
    b = _lift(b, a)
    _check_broadcast("div", a, b)
    ad, bd = a.data, b.data
    if np.any(np.abs(bd) < DIV_GUARD):
        raise DegenerateInputError(f"div: divisor has entries with |x| < {DIV_GUARD:g}")
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, a.shape), _unbroadcast(-g * out / bd, b.shape)

    return _make(out, (a, b), backward, "div")


def maximum(x, c):
    """max(x, c) for a python scalar c."""
    mask = x.data > c
    return _make(np.maximum(x.data, c).astype(x.dtype), (x,), lambda g: (g * mask,), "max")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def relu(x):
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def softplus(x):
    out = np.logaddexp(0, x.data).astype(x.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * sig,), "softplus")


def clip_symmetric(x, bound):
    """Componentwise clip of ``x`` to ``[-bound, bound]``; ``bound`` may be a tensor."""
    bound = _lift(bound, x)
    if np.any(bound.data <= 0):
        raise ContractViolation("clip_symmetric: bound must be positive")
    b = bound.data
    upper = x.data > b
    lower = x.data < -b
    inside = ~(upper | lower)
    out = np.where(upper, b, np.where(lower, -b, x.data)).astype(x.dtype)

    def backward(g):
        return g * inside, _unbroadcast(g * upper - g * lower, bound.shape)

    return _make(out, (x, bound), backward, "clip")


# ---------------------------------------------------------------------------
# shape / reduction
# ---------------------------------------------------------------------------

def matmul(a, b):
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ContractViolation(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(ad @ bd, (a, b), backward, "matmul")


def concat(tensors, axis=1):
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(n != m for i, (n, m) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise ContractViolation(f"concat: shapes {ref} and {t.shape} do not conform along axis {axis}")
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def reshape(x, shape):
    src = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    src = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / n)


def softmax(x, axis=1):
    m = np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _make(s, (x,), backward, "softmax")


def l1_loss(a, b):
    """Mean absolute error."""
    if a.shape != b.shape:
        raise ContractViolation(f"l1_loss: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    n = d.size
    sg = np.sign(d)
    return _make(np.asarray(np.abs(d).mean()), (a, b), lambda g: (g * sg / n, -g * sg / n), "l1")


def mse_loss(a, b):
    if a.shape != b.shape:
        raise ContractViolation(f"mse_loss: shapes {a.shape} and {b.shape} differ")
    d = a.data - b.data
    n = d.size
    return _make(np.asarray((d * d).mean()), (a, b), lambda g: (2 * g * d / n, -2 * g * d / n), "mse")


def _scatter_axis(g, idx, n, axis):
    moved = np.moveaxis(g, axis, 0)
    out = np.zeros((n,) + moved.shape[1:], dtype=g.dtype)
    np.add.at(out, idx, moved)
    return np.moveaxis(out, 0, axis)


def pad(x, width, mode="zero"):
    """Pad the two trailing axes by ``width``; ``mode`` is ``zero`` or ``symmetric``."""
    if width == 0:
        return x
    h, w = x.shape[-2:]
    if mode == "zero":
        cfg = [(0, 0)] * (x.ndim - 2) + [(width, width)] * 2
        out = np.pad(x.data, cfg)
        return _make(out, (x,), lambda g: (g[..., width : width + h, width : width + w],), "pad")
    if mode != "symmetric":
        raise ContractViolation(f"pad: unknown mode {mode!r}")
    ih = np.pad(np.arange(h), width, mode="symmetric")
    iw = np.pad(np.arange(w), width, mode="symmetric")
    out = x.data[..., ih[:, None], iw[None, :]]

    def backward(g):
        g = _scatter_axis(g, ih, h, -2)
        return (_scatter_axis(g, iw, w, -1),)

    return _make(out, (x,), backward, "pad")


def linear_map(x, forward, adjoint, name="linear"):
    """Apply a fixed linear operator; its adjoint supplies the backward rule."""
    return _make(forward(x.data), (x,), lambda g: (adjoint(g),), name)


# ---------------------------------------------------------------------------
# convolutions
# ---------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, k, k), zero padding."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ContractViolation(f"conv2d: input {x.shape} and weight {weight.shape} do not conform")
    n, c, h, w = x.shape
    o, _, k, _ = weight.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ContractViolation(f"conv2d: input {x.shape} too small for kernel {k}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = kernels.im2col(xp, k, stride, ho, wo)
    wmat = weight.data.reshape(o, -1)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (gm.T @ cols).reshape(weight.shape)
        gx = None
        if x.requires_grad:
            gxp = kernels.col2im(gm @ wmat, xp.shape, k, stride, ho, wo)
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        gb = gm.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "conv2d")


def conv_transpose2d(x, weight, bias=None, stride=1, padding=0):
    """Transposed convolution, ``weight`` (Cin, Cout, k, k); output side (H-1)*stride - 2*padding + k."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ContractViolation(f"conv_transpose2d: input {x.shape} and weight {weight.shape} do not conform")
    n, cin, h, w = x.shape
    _, cout, k, _ = weight.shape
    hf, wf = (h - 1) * stride + k, (w - 1) * stride + k
    ho, wo = hf - 2 * padding, wf - 2 * padding
    if ho < 1 or wo < 1:
        raise ContractViolation(f"conv_transpose2d: padding {padding} too large for input {x.shape}")
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    wmat = weight.data.reshape(cin, -1)
    full = kernels.col2im(xm @ wmat, (n, cout, hf, wf), k, stride, h, w)
    out = np.ascontiguousarray(full[:, :, padding : padding + ho, padding : padding + wo])
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)

    def backward(g):
        gf = np.pad(g, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else g
        gcols = kernels.im2col(gf, k, stride, h, w)
        gx = (gcols @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xm.T @ gcols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, backward, "conv_transpose2d")


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Per-channel normalisation of (N, C, H, W). Running buffers are updated in place when training."""
    if x.ndim != 4 or gamma.shape != (x.shape[1],):
        raise ContractViolation(f"batch_norm: input {x.shape} and gamma {gamma.shape} do not conform")
    axes = (0, 2, 3)
    shp = (1, -1, 1, 1)
    if training:
        m = x.size // x.shape[1]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean.astype(x.dtype), running_var.astype(x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    out = gamma.data.reshape(shp) * xhat + beta.data.reshape(shp)
    gam = gamma.data

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * gam.reshape(shp)
        if training:
            m = x.size // x.shape[1]
            gx = (inv.reshape(shp) / m) * (
                m * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx, ggamma, gbeta

    return _make(out.astype(x.dtype, copy=False), (x, gamma, beta), backward, "batch_norm")


# ---------------------------------------------------------------------------
# windowed attention
# ---------------------------------------------------------------------------

def window_logits(q, k, r):
    """Scalar products q_i . k_j for every j in the (2r+1)^2 window of i; -inf outside the image."""
    if q.shape != k.shape or q.ndim != 4:
        raise ContractViolation(f"window_logits: query {q.shape} and key {k.shape} do not conform")
    out = kernels.window_logits(q.data, k.data, r)

    def backward(g):
        g = np.where(np.isfinite(out), g, 0).astype(q.dtype)
        return kernels.window_logits_grad(g, q.data, k.data, r)

    return _make(out, (q, k), backward, "window_logits")


def window_apply(weights, v, r):
    """Weighted sum of ``v`` over each pixel's window using (N, K, H, W) weights."""
    n, kk, h, w = weights.shape
    if kk != kernels.window_size(r) or v.ndim != 4 or v.shape[0] != n or v.shape[2:] != (h, w):
        raise ContractViolation(f"window_apply: weights {weights.shape} and values {v.shape} do not conform")
    out = kernels.window_apply(weights.data, v.data, r)
    return _make(out, (weights, v), lambda g: kernels.window_apply_grad(g, weights.data, v.data, r), "window_apply")
