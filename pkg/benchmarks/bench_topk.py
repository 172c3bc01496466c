"""Time the exact top-k scan on both backends.

    python benchmarks/bench_topk.py --docs 10000 50000 --dim 256 --k 5
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from stride.retrieval import kernels


def best_of(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--docs", type=int, nargs="+", default=[1000, 10000, 100000])
    ap.add_argument("--dim", type=int, default=256)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--queries", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    backends = ["numpy"] + (["numba"] if kernels.HAVE_NUMBA else [])
    if not kernels.HAVE_NUMBA:
        print("numba unavailable (or STRIDE_DISABLE_NUMBA set); timing numpy only")
    print(f"{'docs':>8} {'backend':>8} {'ms/query':>10} {'speedup':>8}")
    for n in args.docs:
        m = rng.standard_normal((n, args.dim)).astype(np.float32)
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        qs = rng.standard_normal((args.queries, args.dim))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        # warm the jit cache outside the timed region
        for b in backends:
            kernels.topk(m, qs[0], args.k, backend=b)
        results = {}
        for b in backends:
            t = best_of(lambda: [kernels.topk(m, q, args.k, backend=b) for q in qs], args.repeats)
            results[b] = t / args.queries * 1e3
        agree = all(
            np.array_equal(kernels.topk(m, q, args.k, "numpy")[0], kernels.topk(m, q, args.k, b)[0])
            for b in backends
            for q in qs[:3]
        )
        for b in backends:
            print(f"{n:>8} {b:>8} {results[b]:>10.3f} {results['numpy'] / results[b]:>7.2f}x")
        if not agree:
            print("WARNING: backends disagree on top-k ids")


if __name__ == "__main__":
    main()
