#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Both backends are always importable regardless of the ADASAP_NUMBA selection,
so this script times them side by side on the shapes the default CNN
actually runs, plus one full forward+backward training step per backend.

Usage: python benchmarks/bench_kernels.py [--iters N]
"""

import argparse
import os
import time

import numpy as np

from adasap import kernels as K


def timeit(fn, iters, warmup=3):
    for _ in range(warmup):
        fn()
    t0 = time.perf_counter()
    for _ in range(iters):
        fn()
    return (time.perf_counter() - t0) / iters * 1e3  # ms


def bench_kernels(iters):
    rng = np.random.default_rng(0)
    cases = [
        ("conv 128x1->8 @28", (128, 1, 28, 28), (8, 1, 3, 3)),
        ("conv 128x8->16 @14", (128, 8, 14, 14), (16, 8, 3, 3)),
    ]
    rows = []
    for label, xshape, wshape in cases:
        x = rng.standard_normal(xshape)
        w = rng.standard_normal(wshape)
        b = rng.standard_normal(wshape[0])
        out = K.conv2d_forward_numpy(x, w, b, 1, 1)
        go = rng.standard_normal(out.shape)
        pairs = [("numpy", K.conv2d_forward_numpy, K.conv2d_backward_numpy)]
        if K.NUMBA_ENABLED:
            pairs.append(("numba", K.conv2d_forward_numba, K.conv2d_backward_numba))
        for name, fwd, bwd in pairs:
            tf = timeit(lambda: fwd(x, w, b, 1, 1), iters)
            tb = timeit(lambda: bwd(x, w, go, 1, 1), iters)
            rows.append((f"{label} fwd", name, tf))
            rows.append((f"{label} bwd", name, tb))
    x = rng.standard_normal((128, 8, 28, 28))
    outp, arg = K.maxpool2d_forward_numpy(x, 2, 2)
    gp = rng.standard_normal(outp.shape)
    pairs = [("numpy", K.maxpool2d_forward_numpy, K.maxpool2d_backward_numpy)]
    if K.NUMBA_ENABLED:
        pairs.append(("numba", K.maxpool2d_forward_numba, K.maxpool2d_backward_numba))
    for name, fwd, bwd in pairs:
        tf = timeit(lambda: fwd(x, 2, 2), iters)
        tb = timeit(lambda: bwd(gp, arg, 28, 28), iters)
        rows.append(("pool 128x8 @28 fwd", name, tf))
        rows.append(("pool 128x8 @28 bwd", name, tb))
    return rows


def bench_training_step(iters):
    from adasap import tensor as T
    from adasap.models import ModelSpec, build_model

    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (128, 1, 28, 28))
    y = rng.integers(0, 10, 128)
    model = build_model(ModelSpec(), seed=0)
    params = model.trainable_params()

    def step():
        T.zero_grads(params)
        T.backward(model.loss((x, y)))

    return timeit(step, iters)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iters", type=int, default=20)
    args = parser.parse_args()

    print(f"active backend: {K.BACKEND} (ADASAP_NUMBA={os.environ.get('ADASAP_NUMBA', '1')})")
    rows = bench_kernels(args.iters)
    width = max(len(r[0]) for r in rows)
    by_case: dict[str, dict[str, float]] = {}
    for case, backend, ms in rows:
        by_case.setdefault(case, {})[backend] = ms
    for case, times in by_case.items():
        parts = [f"{name} {ms:8.2f} ms" for name, ms in times.items()]
        line = f"{case:<{width}}  " + "   ".join(parts)
        if "numpy" in times and "numba" in times:
            line += f"   speedup x{times['numpy'] / times['numba']:.2f}"
        print(line)
    ms = bench_training_step(args.iters)
    print(f"full fwd+bwd step (batch 128, default CNN) on {K.BACKEND}: {ms:.1f} ms")
    if K.NUMBA_ENABLED:
        print("rerun with ADASAP_NUMBA=0 to time the full step on the numpy fallback")


if __name__ == "__main__":
    main()
