"""Time the compiled graph kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--trees 3000] [--atoms 20] [--repeat 3]

Both backends run on the same random trees; outputs are compared before timing.
"""

import argparse
import random
import sys
import time

from retroebm import _kernels_py
from retroebm.molcore import ELEMENTS, MolGraph

try:
    from retroebm import _ckernels
except ImportError:
    _ckernels = None


def random_trees(n, max_atoms, seed):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        k = rng.randint(2, max_atoms)
        atoms = tuple(rng.choice(ELEMENTS) for _ in range(k))
        bonds = tuple((rng.randrange(i), i, rng.choice((1, 1, 2, 3))) for i in range(1, k))
        m = MolGraph(atoms, bonds)
        out.append((m.atoms, m.adjacency))
    return out


def workload(impl, trees):
    res = []
    for atoms, adj in trees:
        res.append(impl.canonical_code(atoms, adj))
        res.append(impl.environment_hashes(atoms, adj, 2, 1024))
    return res


def best_of(impl, trees, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        workload(impl, trees)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trees", type=int, default=3000)
    ap.add_argument("--atoms", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    trees = random_trees(args.trees, args.atoms, args.seed)
    py = best_of(_kernels_py, trees, args.repeat)
    print(f"python  {py:8.3f} s")
    if _ckernels is None:
        print("cython  not built (pip install -e . --no-build-isolation)")
        return 0
    if workload(_ckernels, trees) != workload(_kernels_py, trees):
        print("backends disagree", file=sys.stderr)
        return 1
    cy = best_of(_ckernels, trees, args.repeat)
    print(f"cython  {cy:8.3f} s")
    print(f"speedup {py / cy:8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
