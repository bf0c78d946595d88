#!/usr/bin/env python3
"""Benchmark the numba convolution kernels against the pure-numpy fallback.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N]

Times forward, grad-input, and grad-weight passes on shapes drawn from the
actual model (encoder stages at 64 and 256 px input) and prints a table with
the speedup of the numba path. The first numba call is excluded from timing
(JIT compilation).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fpnet import kernels_numba, kernels_numpy

CASES = [
    ("enc s1a 64px", (4, 3, 64, 64), (8, 3, 3, 3), 2, 1, 1),
    ("enc s2a 64px", (4, 8, 16, 16), (16, 8, 3, 3), 2, 1, 1),
    ("enc s1a 256px", (2, 3, 256, 256), (32, 3, 3, 3), 2, 1, 1),
    ("enc s2b 256px", (2, 64, 32, 32), (64, 64, 3, 3), 1, 1, 1),
    ("rfb dil7 64px", (2, 16, 16, 16), (16, 16, 3, 3), 1, 7, 7),
]


def bench(fn, args, repeats):
    fn(*args)  # warm-up (and JIT for the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    print(f"{'case':<16} {'pass':<12} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}")
    for name, xs, ws, stride, pad, dil in CASES:
        x = rng.standard_normal(xs).astype(np.float32)
        w = rng.standard_normal(ws).astype(np.float32)
        out = kernels_numpy.conv2d_forward(x, w, stride, pad, dil)
        g = rng.standard_normal(out.shape).astype(np.float32)
        passes = [
            ("forward", (x, w, stride, pad, dil),
             kernels_numpy.conv2d_forward, kernels_numba.conv2d_forward),
            ("grad_input", (g, w, xs[2:], stride, pad, dil),
             kernels_numpy.conv2d_grad_input, kernels_numba.conv2d_grad_input),
            ("grad_weight", (g, x, ws[2:], stride, pad, dil),
             kernels_numpy.conv2d_grad_weight, kernels_numba.conv2d_grad_weight),
        ]
        for pass_name, call_args, np_fn, nb_fn in passes:
            t_np = bench(np_fn, call_args, args.repeats)
            t_nb = bench(nb_fn, call_args, args.repeats)
            print(f"{name:<16} {pass_name:<12} {t_np * 1e3:>11.3f} "
                  f"{t_nb * 1e3:>11.3f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()
