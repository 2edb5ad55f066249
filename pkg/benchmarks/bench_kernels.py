"""Benchmark the compiled training kernel against the pure-numpy fallback.

Runs the same gradient-descent workloads through both implementations and
reports wall-clock times plus the maximum weight divergence (which should
be at floating-point noise level).

Usage: python3 benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

import argparse
import time

import numpy as np

from coalfed.kernels import OUTPUT_LINEAR, OUTPUT_SOFTMAX, init_weights, pure

try:
    from coalfed import _fastkernels
except ImportError:
    _fastkernels = None


def make_case(name, n, d, hidden, softmax, batch, rng):
    X = rng.normal(size=(n, d))
    if softmax:
        k = 5
        Y = np.zeros((n, k))
        Y[np.arange(n), rng.integers(0, k, n)] = 1.0
        sizes = (d, *hidden, k)
        kind = OUTPUT_SOFTMAX
    else:
        Y = rng.normal(size=(n, 1))
        sizes = (d, *hidden, 1)
        kind = OUTPUT_LINEAR
    return name, X, Y, sizes, batch, kind


def run(fn, X, Y, sizes, batch, kind, steps, repeat):
    best = float("inf")
    w_out = None
    for _ in range(repeat):
        w = init_weights(sizes, seed=7)
        t0 = time.perf_counter()
        fn(X, Y, sizes, w, 0.01, steps, batch, 13, kind)
        best = min(best, time.perf_counter() - t0)
        w_out = w
    return best, w_out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    if _fastkernels is None:
        print("compiled kernel not built; nothing to compare")
        return

    rng = np.random.default_rng(1)
    cases = [
        make_case("linear full-batch 1k x 8", 1000, 8, (), False, 0, rng),
        make_case("linear minibatch 1k x 8", 1000, 8, (), False, 32, rng),
        make_case("mlp(32) full-batch 1k x 8", 1000, 8, (32,), False, 0, rng),
        make_case("mlp(32) minibatch 1k x 8", 1000, 8, (32,), False, 32, rng),
        make_case("softmax mlp(16) minibatch 2k x 10", 2000, 10, (16,), True,
                  64, rng),
    ]

    print(f"{'case':38s} {'pure':>9s} {'cython':>9s} {'speedup':>8s} {'max|dw|':>10s}")
    for name, X, Y, sizes, batch, kind in cases:
        tp, wp = run(pure.train_steps, X, Y, sizes, batch, kind,
                     args.steps, args.repeat)
        tc, wc = run(_fastkernels.train_steps, X, Y, sizes, batch, kind,
                     args.steps, args.repeat)
        dw = float(np.max(np.abs(wp - wc)))
        print(f"{name:38s} {tp:8.3f}s {tc:8.3f}s {tp / tc:7.2f}x {dw:10.2e}")


if __name__ == "__main__":
    main()
