"""Time the compiled neighbour-mean kernels against the numpy fallback.

    python benchmarks/bench_kernels.py --n 2000 --dim 32 --repeat 20
"""

import argparse
import timeit

import numpy as np

from langtopo import _fallback
from langtopo.graph import SbmSpec, generate_sbm

try:
    from langtopo import _kernels
except ImportError:
    _kernels = None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--blocks", type=int, default=4)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    g = generate_sbm(SbmSpec(n=args.n, blocks=args.blocks, p_in=0.05, p_out=0.005,
                             d_in=max(args.blocks, 4), seed=args.seed))
    h = np.random.default_rng(args.seed).standard_normal((g.n, args.dim))
    print(f"graph: {g.n} nodes, {g.num_edges} edges, dim {args.dim}")

    backends = {"numpy": _fallback}
    if _kernels is not None:
        backends["cython"] = _kernels
    else:
        print("compiled extension not built; timing the fallback only")

    ref = _fallback.neighbor_mean(g.indptr, g.indices, h)
    timings = {}
    for name, mod in backends.items():
        assert np.allclose(mod.neighbor_mean(g.indptr, g.indices, h), ref, atol=1e-12)
        for fn in ("neighbor_mean", "neighbor_mean_transpose"):
            f = getattr(mod, fn)
            t = min(timeit.repeat(lambda: f(g.indptr, g.indices, h), number=1, repeat=args.repeat))
            timings[name, fn] = t
            print(f"{name:7s} {fn:24s} {t * 1e3:9.3f} ms")
    if "cython" in backends:
        for fn in ("neighbor_mean", "neighbor_mean_transpose"):
            print(f"speedup {fn}: {timings['numpy', fn] / timings['cython', fn]:.1f}x")


if __name__ == "__main__":
    main()
