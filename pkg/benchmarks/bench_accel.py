"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_accel.py [--repeat 5] [--json out.json]

Each kernel is run once first so numba compilation is not timed; the best of
``--repeat`` runs is reported along with the max difference between
the two backends relative to the largest output entry.
"""

import argparse
import json
import timeit

import numpy as np

from srfkit import _accel
from srfkit.graph import gen_random_graph
from srfkit.rng import RngState


def cases():
    gen = RngState(0).generator()
    for n in (256, 4096):
        a = gen.standard_normal((n, 64))
        yield f"fwht n={n} m=64", _accel.fwht_numpy, _accel.fwht_numba, (a,)
    for n, p in ((1000, 0.01), (5000, 0.002)):
        g = gen_random_graph(n, p, rng=RngState(n))
        indptr, indices = g.csr
        x = gen.standard_normal((n, 96))
        yield f"aggregate n={n} E={g.num_edges} m=96", _accel.aggregate_numpy, _accel.aggregate_numba, (indptr, indices, x)
        yield f"edge_sqdiff n={n} E={g.num_edges} m=96", _accel.edge_sqdiff_numpy, _accel.edge_sqdiff_numba, (g.edges, x)


def best_of(fn, args, repeat):
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rows = []
    print(f"{'kernel':<40} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8} {'rel diff':>10}")
    for name, slow, fast, fargs in cases():
        t_np, t_nb = best_of(slow, fargs, args.repeat), best_of(fast, fargs, args.repeat)
        a, b = np.asarray(slow(*fargs)), np.asarray(fast(*fargs))
        diff = float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))
        rows.append({"kernel": name, "numpy_s": t_np, "numba_s": t_nb, "speedup": t_np / t_nb, "max_rel_diff": diff})
        print(f"{name:<40} {1e3 * t_np:>10.3f} {1e3 * t_nb:>10.3f} {t_np / t_nb:>8.2f} {diff:>10.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
