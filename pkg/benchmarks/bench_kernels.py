"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` time for each backend
and the speed ratio. Without the compiled extension only the fallback is timed.
"""
import argparse
import timeit

import numpy as np

from dlmlab import _pykernels

try:
    from dlmlab import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    # sizes match a tinyconv forward/backward pass with M=5 samples and a 128-example batch
    x = rng.standard_normal((5, 128, 1, 8, 8))
    w = rng.standard_normal((5, 8, 1, 3, 3))
    g = rng.standard_normal((5, 128, 8, 6, 6))
    logits = rng.standard_normal((128 * 5, 10)) * 5
    return {
        "conv2d_forward": (x, w),
        "conv2d_grad_weight": (x, g),
        "conv2d_grad_input": (g, w),
        "logsumexp_rows": (logits,),
    }


def best_time(fn, args, repeat, number):
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'python (ms)':>12} {'cython (ms)':>12} {'speedup':>8}")
    for name, inputs in cases(rng).items():
        py = best_time(getattr(_pykernels, name), inputs, args.repeat, args.number)
        if _ckernels is None:
            print(f"{name:<20} {py * 1e3:12.3f} {'n/a':>12} {'n/a':>8}")
            continue
        cy = best_time(getattr(_ckernels, name), inputs, args.repeat, args.number)
        np.testing.assert_allclose(getattr(_ckernels, name)(*inputs), getattr(_pykernels, name)(*inputs), rtol=1e-10, atol=1e-10)
        print(f"{name:<20} {py * 1e3:12.3f} {cy * 1e3:12.3f} {py / cy:8.2f}x")


if __name__ == "__main__":
    main()
