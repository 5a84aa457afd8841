"""Central-difference gradient checks."""
import numpy as np

from ..errors import DegenerateInputError
from .tensor import Tensor, no_grad


def _scalar(y):
    val = float(np.asarray(y.data).reshape(-1)[0])
    if not np.isfinite(val):
        raise DegenerateInputError("grad_check: forward value is not finite")
    return val


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    err = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(err.max()) if err.size else 0.0


def grad_check(fn, point, h=1e-5):
    """Max relative error between the tape gradient of scalar ``fn`` at ``point`` and central differences."""
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    y = fn(x)
    _scalar(y)
    y.backward()
    analytic = x.grad.copy()

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = _scalar(fn(Tensor(base.copy())))
            flat[i] = old - h
            fm = _scalar(fn(Tensor(base.copy())))
            flat[i] = old
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
    return relative_error(analytic, numeric)


def grad_check_params(loss_fn, params, h=1e-5, max_coords=None, rng=None):
    """Same check with respect to leaf parameters already wired into ``loss_fn()``.

    With ``max_coords`` only that many randomly chosen coordinates per parameter are perturbed.
    """
    loss = loss_fn()
    _scalar(loss)
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    with no_grad():
        for p, ga in zip(params, analytic):
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = rng.choice(flat.size, size=max_coords, replace=False)
            num = np.empty(idx.size)
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                fp = _scalar(loss_fn())
                flat[i] = old - h
                fm = _scalar(loss_fn())
                flat[i] = old
                num[j] = (fp - fm) / (2 * h)
            worst = max(worst, relative_error(ga.reshape(-1)[idx], num))
    return worst
