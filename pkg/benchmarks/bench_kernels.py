"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 20]

Shapes follow a training step of the toy model (batch 4, 32x32, F=16, r=3).
"""
import argparse
import time

import numpy as np

from unfold_pansharp import kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    n, c, h, w, d, r = 4, 16, 32, 32, 16, 3
    xp = rng.standard_normal((n, c, h + 2, w + 2))
    cols = K.np_im2col(xp, 3, 1, h, w)
    q = rng.standard_normal((n, d, h, w))
    k = rng.standard_normal((n, d, h, w))
    logits = K.np_window_logits(q, k, r)
    wts = np.where(np.isfinite(logits), rng.random(logits.shape), 0.0)
    v = rng.standard_normal((n, c, h, w))
    g = rng.standard_normal(v.shape)
    gl = np.where(np.isfinite(logits), rng.standard_normal(logits.shape), 0.0)
    return {
        "im2col 3x3": (lambda f: f(xp, 3, 1, h, w), K.np_im2col, K.nb_im2col),
        "col2im 3x3": (lambda f: f(cols, xp.shape, 3, 1, h, w), K.np_col2im, K.nb_col2im),
        "window_logits r=3": (lambda f: f(q, k, r), K.np_window_logits, K.nb_window_logits),
        "window_logits_grad": (lambda f: f(gl, q, k, r), K.np_window_logits_grad, K.nb_window_logits_grad),
        "window_apply": (lambda f: f(wts, v, r), K.np_window_apply, K.nb_window_apply),
        "window_apply_grad": (lambda f: f(g, wts, v, r), K.np_window_apply_grad, K.nb_window_apply_grad),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (call, f_np, f_nb) in cases(np.random.default_rng(0)).items():
        t_np = best_of(lambda: call(f_np), args.repeat)
        t_nb = best_of(lambda: call(f_nb), args.repeat)
        print(f"{name:<22}{1e3 * t_np:>10.2f}{1e3 * t_nb:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
