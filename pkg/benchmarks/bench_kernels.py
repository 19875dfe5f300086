"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 2000]

Each kernel runs on the same inputs in both backends; outputs are checked
for equality before timing.
"""

import argparse
import sys
import timeit

import numpy as np

from indistkit import _kernels_py

try:
    from indistkit import _ckernels
except ImportError:
    _ckernels = None


def cases(n: int, rng: np.random.Generator):
    P = rng.random((n, 5))
    D = _kernels_py.chebyshev_matrix(P)
    y = rng.random(n)
    cols = rng.random((n, 40))
    assign = rng.integers(0, 8, n)
    X = rng.random((n, 4))
    w = np.ones(n)
    return {
        "chebyshev_matrix": lambda b: b.chebyshev_matrix(P),
        "complete_linkage": lambda b: b.complete_linkage(D.copy(), 3, np.inf),
        "cell_covariances": lambda b: b.cell_covariances(cols, y, assign, 8),
        "best_split": lambda b: b.best_split(X, y, w, 1),
    }


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, z) for x, z in zip(a, b))
    return bool(np.allclose(a, b, rtol=0, atol=1e-12, equal_nan=True))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 1
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<18} {'numpy (s)':>10} {'cython (s)':>11} {'speedup':>8}")
    for name, fn in cases(args.n, np.random.default_rng(args.seed)).items():
        if not same(fn(_kernels_py), fn(_ckernels)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        tp = min(timeit.repeat(lambda: fn(_kernels_py), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:<18} {tp:>10.4f} {tc:>11.4f} {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
