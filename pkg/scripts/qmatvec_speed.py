"""Soft benchmark: int8 dynamic-range matmul vs float32 BLAS on one core.

Prints the speed ratio per shape; the target is >= 1.3x for large layers.
"""

import argparse
import time

import numpy as np

from simulstream.quantization import qmatmul, quantize_tensor


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1, help="activation rows per call")
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'shape':>12} {'float ms':>9} {'int8 ms':>9} {'speedup':>8}")
    for k, n in [(512, 512), (1024, 1024), (1792, 3072), (2048, 4096)]:
        w = rng.standard_normal((k, n)).astype(np.float32)
        x = rng.standard_normal((args.rows, k)).astype(np.float32)
        q = quantize_tensor(w)
        qmatmul(x, q)  # compile
        f = best_of(lambda: x @ w, args.repeat)
        i = best_of(lambda: qmatmul(x, q), args.repeat)
        print(f"{k:>5}x{n:<6} {f * 1e3:>9.3f} {i * 1e3:>9.3f} {f / i:>7.2f}x")


if __name__ == "__main__":
    main()
