"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py --n 3000 --dim 512 --threads 4
"""
import argparse
import time

import numpy as np

from soda_ood import _backend
from soda_ood.graph import percentile_threshold


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(n, dim, ref, iters, threads, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    r = rng.normal(size=(ref, dim))
    r /= np.linalg.norm(r, axis=1, keepdims=True)
    k = _backend.BACKENDS["python"]
    sims = k.pairwise_similarity(x, threads)
    eps = percentile_threshold(sims, 0.02)
    indptr, indices = k.threshold_adjacency(sims, eps, threads)
    s0 = rng.random(n)
    return {
        "pairwise_similarity": lambda k: k.pairwise_similarity(x, threads),
        "cross_similarity": lambda k: k.cross_similarity(x, r, threads),
        "upper_triangle": lambda k: k.upper_triangle(sims),
        "threshold_adjacency": lambda k: k.threshold_adjacency(sims, eps, threads),
        f"propagate (T={iters})": lambda k: k.propagate(s0, indptr, indices, 0.2, iters, 0.0, threads),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=3000)
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--ref", type=int, default=500, help="reference rows for cross_similarity")
    parser.add_argument("--iters", type=int, default=50)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    _backend.set_num_threads(args.threads)
    threads = _backend.get_num_threads()
    names = sorted(_backend.BACKENDS)
    print(f"n={args.n} dim={args.dim} threads={threads} backends={','.join(names)}")
    print(f"{'kernel':<24}" + "".join(f"{b:>12}" for b in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(args.n, args.dim, args.ref, args.iters, threads, args.seed).items():
        t = {b: best_of(lambda: fn(_backend.BACKENDS[b]), args.repeats) for b in names}
        row = f"{label:<24}" + "".join(f"{t[b] * 1e3:>10.2f}ms" for b in names)
        if "cython" in t:
            row += f"{t['python'] / t['cython']:>11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
