"""Time the conv2d kernels: numba fast path vs pure-numpy fallback.

Imports both backend modules directly (ignoring FEDSCOPE_KERNELS) so one
process times the two side by side.  Usage:

    python3 benchmarks/bench_kernels.py [--repeats 20]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from fedscope.kernels import conv_numpy

try:
    from fedscope.kernels import conv_numba
except ImportError:
    conv_numba = None

# (label, batch, in_ch, h, w, out_ch, k, stride, pad)
CASES = [
    ("smoke  8x3x12x12 k3", 8, 3, 12, 12, 8, 3, 1, 1),
    ("shard 32x3x16x16 k3", 32, 3, 16, 16, 16, 3, 1, 1),
    ("wide  32x8x16x16 k3", 32, 8, 16, 16, 32, 3, 1, 1),
    ("full  32x3x32x32 k3", 32, 3, 32, 32, 22, 3, 1, 1),
]


def _best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(mod, n, c, h, w, f, k, stride, pad, repeats):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, c, h, w)).astype(np.float32)
    wt = rng.standard_normal((f, c, k, k)).astype(np.float32)
    out = mod.conv2d_forward(x, wt, stride, pad)  # warm-up / jit compile
    gout = rng.standard_normal(out.shape).astype(np.float32)
    mod.conv2d_grad_weight(gout, x, k, k, stride, pad)
    mod.conv2d_grad_input(gout, wt, h, w, stride, pad)
    return (
        _best_of(lambda: mod.conv2d_forward(x, wt, stride, pad), repeats),
        _best_of(lambda: mod.conv2d_grad_weight(gout, x, k, k, stride, pad),
                 repeats),
        _best_of(lambda: mod.conv2d_grad_input(gout, wt, h, w, stride, pad),
                 repeats),
    )


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=20,
                    help="timed repetitions per kernel (best-of)")
    args = ap.parse_args()

    if conv_numba is None:
        print("numba backend unavailable; timing numpy only")

    header = f"{'case':22s} {'kernel':12s} {'numpy ms':>10s}"
    if conv_numba is not None:
        header += f" {'numba ms':>10s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for label, *dims in CASES:
        np_times = bench_case(conv_numpy, *dims, args.repeats)
        nb_times = (bench_case(conv_numba, *dims, args.repeats)
                    if conv_numba is not None else None)
        for i, kernel in enumerate(("forward", "grad_weight", "grad_input")):
            row = f"{label:22s} {kernel:12s} {np_times[i] * 1e3:10.3f}"
            if nb_times is not None:
                row += (f" {nb_times[i] * 1e3:10.3f}"
                        f" {np_times[i] / nb_times[i]:7.2f}x")
            print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
