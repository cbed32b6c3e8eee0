"""Benchmark the compiled kernel backend against the NumPy fallback.

Runs the three convolution primitives (gather = forward, scatter = input
gradient, patch_outer = weight gradient) on model-shaped workloads, checks
that both backends agree numerically, and reports best-of-N wall times.

Usage:
    python3 benchmarks/bench_kernels.py [--batch N] [--repeats R]
"""

import argparse
import time

import numpy as np

from stsc.nn import kernels

# (name, h, w, c_in, c_out, stride, pad) — the conv shapes that dominate
# training time at the default model widths.
WORKLOADS = (
    ("encoder-in", 60, 10, 4, 16, 2, 1),
    ("encoder-mid", 30, 5, 16, 32, 2, 1),
    ("encoder-deep", 15, 3, 32, 64, 2, 1),
    ("residual", 8, 2, 64, 64, 1, 1),
    ("horizon", 12, 1, 16, 16, 1, 1),
    ("mapper", 8, 2, 64, 16, 1, 2),
)


def make_case(name, h, w, c_in, c_out, stride, pad, batch, rng):
    kh = kw = 3
    hp, wp = h + 2 * pad, w + 2 * pad
    h_out = (hp - kh) // stride + 1
    w_out = (wp - kw) // stride + 1
    xpad = rng.normal(size=(batch, hp, wp, c_in))
    weights = rng.normal(size=(kh, kw, c_in, c_out))
    dy = rng.normal(size=(batch, h_out, w_out, c_out))
    return {
        "name": name,
        "gather": lambda: kernels.gather(xpad, weights, stride, stride),
        "scatter": lambda: kernels.scatter(dy, weights, stride, stride,
                                           hp, wp),
        "patch_outer": lambda: kernels.patch_outer(xpad, dy, stride, stride,
                                                   kh, kw),
    }


def best_time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def max_rel_diff(a, b):
    scale = np.maximum(np.abs(a), np.abs(b))
    scale[scale == 0] = 1.0
    return float(np.max(np.abs(a - b) / scale))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--batch", type=int, default=64,
                        help="batch size for every workload (default 64)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats; the best is reported")
    args = parser.parse_args()

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}   batch={args.batch}   "
          f"repeats={args.repeats}")
    if "native" not in backends:
        print("note: compiled extension unavailable; timing numpy only")

    rng = np.random.default_rng(0)
    cases = [make_case(*w, args.batch, rng) for w in WORKLOADS]

    header = f"{'workload':<14}{'op':<13}" + "".join(
        f"{b + ' (ms)':>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))

    worst_diff = 0.0
    for case in cases:
        for op in ("gather", "scatter", "patch_outer"):
            times = {}
            results = {}
            for backend in backends:
                kernels.set_backend(backend)
                results[backend] = case[op]()
                times[backend] = best_time(case[op], args.repeats)
            if len(backends) == 2:
                diff = max_rel_diff(results["native"], results["numpy"])
                worst_diff = max(worst_diff, diff)
            row = f"{case['name']:<14}{op:<13}" + "".join(
                f"{times[b] * 1e3:>14.3f}" for b in backends)
            if len(backends) == 2:
                row += f"{times['numpy'] / times['native']:>9.2f}x"
            print(row)

    if len(backends) == 2:
        print(f"\nmax relative difference between backends: {worst_diff:.3e}")
    kernels.set_backend(kernels.available_backends()[0])


if __name__ == "__main__":
    main()
