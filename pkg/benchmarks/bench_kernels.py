"""Time the compiled kernels against the numpy fallback.

Run: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from gvqlab import kernels
from gvqlab.graph import SbmSpec, generate_sbm


def cases(rng):
    g = generate_sbm(SbmSpec(blocks=10, nodes_per_block=100, p_in=0.1, feature_dim=64, seed=0))
    x = rng.standard_normal((g.n, 64))
    c = rng.standard_normal((256, 64))
    _, arg = kernels.csr_max(x, g.indptr, g.indices)
    i, j = rng.integers(0, g.n, 20000), rng.integers(0, g.n, 20000)
    h = rng.standard_normal((400, 16))
    assign = rng.integers(0, 16, 400)
    cov = np.cov(rng.standard_normal((500, 64)), rowvar=False)
    return {
        "pairwise_sq_dist 1000x256x64": lambda impl: kernels.pairwise_sq_dist(x, c, impl=impl),
        "csr_sum n=1000": lambda impl: kernels.csr_sum(x, g.indptr, g.indices, impl=impl),
        "csr_scatter n=1000": lambda impl: kernels.csr_scatter(x, g.indptr, g.indices, g.n, impl=impl),
        "csr_max n=1000": lambda impl: kernels.csr_max(x, g.indptr, g.indices, impl=impl),
        "max_scatter n=1000": lambda impl: kernels.max_scatter(x, arg, g.n, impl=impl),
        "pair_dist 20000 pairs": lambda impl: kernels.pair_dist(x, i, j, impl=impl),
        "coassign_scan n=400": lambda impl: kernels.coassign_scan(h, assign, 1.0, impl=impl),
        "jacobi_eigvalsh 64x64": lambda impl: kernels.get_impl(impl).jacobi_eigvalsh(cov),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(np.random.default_rng(0)).items():
        times = []
        for b in backends:
            fn(b)  # warm up
            times.append(min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)))
        line = f"{name:32s}" + "".join(f"{t * 1e3:10.2f}ms" for t in times)
        if len(times) > 1:
            line += f"{times[0] / times[1]:11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
