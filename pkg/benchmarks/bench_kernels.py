"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_kernels.py --n 400 --p 0.05 --repeat 5
"""

import argparse
import random
import timeit

import numpy as np

from docd import _kernels as K
from docd.graph import Graph


def random_graph(n: int, p: float, seed: int) -> Graph:
    rng = random.Random(seed)
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if rng.random() < p]
    return Graph.from_edges(edges, range(n))


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--p", type=float, default=0.05)
    ap.add_argument("--k", type=int, default=8, help="number of communities")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    g = random_graph(args.n, args.p, args.seed)
    indptr, indices = g.csr
    rng = np.random.default_rng(args.seed)
    mem = rng.random((g.n, args.k)) < 2 / args.k
    rows = np.arange(g.n)
    cases = {
        "masked_link_counts": (
            lambda: K.masked_link_counts_numpy(indptr, indices, mem[:, 0], rows),
            lambda: K.masked_link_counts_numba(indptr, indices, mem[:, 0], rows)),
        "union_link_counts": (
            lambda: K.union_link_counts_numpy(indptr, indices, mem),
            lambda: K.union_link_counts_numba(indptr, indices, mem)),
        "eccentricities": (
            lambda: K.eccentricities_numpy(indptr, indices),
            lambda: K.eccentricities_numba(indptr, indices)),
    }
    print(f"n={g.n} m={g.m} k={args.k} numba={'yes' if K.numba is not None else 'missing'}")
    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (slow, fast) in cases.items():
        assert np.array_equal(slow(), fast()), name
        t_np = min(timeit.repeat(slow, number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(fast, number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<22}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>10.1f}x")


if __name__ == "__main__":
    main()
