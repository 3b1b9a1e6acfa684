#!/usr/bin/env python3
"""Time each hot kernel under both backends.

The jitted loop kernels and the numpy fallbacks are bit-identical by
construction; this script shows what the @njit path buys. Run with numba
installed (the default backend) — both implementations are imported
explicitly, so no env flag is needed here. Sizes mirror real workloads:
the autoregressive recursion dominates dataset generation, the others sit
in the training inner loop.

Usage: python benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from groupcast import kernels
from groupcast.backend import USING_NUMBA, backend_name


def bench(fn, *args, repeats=5, warmup=1):
    for _ in range(warmup):
        fn(*args)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    cases = []

    cases.append((
        "mix64_stream (2M u64)",
        kernels.mix64_stream_loop, kernels.mix64_stream_numpy,
        (np.uint64(42), 0, 2_000_000),
    ))

    coeffs = rng.normal(size=(2, 6, 6)) * 0.12
    innov = rng.normal(size=(20_000, 6))
    cases.append((
        "var_recursion (T=20k, K=6, L=2)",
        kernels.var_recursion_loop, kernels.var_recursion_numpy,
        (coeffs, innov),
    ))

    x = np.ascontiguousarray(rng.normal(size=(256, 64, 32)).astype(np.float32))
    cos = np.cos(rng.normal(size=(64, 16))).astype(np.float32)
    sin = np.sin(rng.normal(size=(64, 16))).astype(np.float32)
    cases.append((
        "rotary_apply (256x64x32 f32)",
        kernels.rotary_apply_loop, kernels.rotary_apply_numpy,
        (x, cos, sin),
    ))

    t = rng.normal(size=50_000)
    p = rng.normal(size=(50_000, 21))
    lv = np.linspace(0.01, 0.99, 21)
    mk = np.ones(50_000)
    cases.append((
        "pinball_cells (50k x 21)",
        kernels.pinball_cells_loop, kernels.pinball_cells_numpy,
        (t, p, lv, mk),
    ))
    cases.append((
        "pinball_grad (50k x 21)",
        kernels.pinball_grad_loop, kernels.pinball_grad_numpy,
        (t, p, lv, mk),
    ))

    print(f"active backend: {backend_name()} (numba available: {USING_NUMBA})\n")
    header = f"{'kernel':35s} {'loop' + ('/numba' if USING_NUMBA else '/py'):>12s} {'numpy':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))
    for name, loop_fn, numpy_fn, fnargs in cases:
        out_a = loop_fn(*fnargs)
        out_b = numpy_fn(*fnargs)
        assert np.array_equal(out_a, out_b), f"{name}: backends disagree"
        t_loop = bench(loop_fn, *fnargs, repeats=args.repeats)
        t_np = bench(numpy_fn, *fnargs, repeats=args.repeats)
        print(f"{name:35s} {t_loop * 1e3:10.2f}ms {t_np * 1e3:10.2f}ms {t_np / t_loop:8.1f}x")


if __name__ == "__main__":
    main()
