import itertools
import random

import pytest

from retroebm.benchmark import BenchmarkConfig, generate_benchmark
from retroebm.molcore import ELEMENTS, MolGraph

SMALL = dict(inventory_size=25, molecule_budget=150, max_depth=3, max_atoms=14, max_attempts=20000)


def random_tree(rng: random.Random, max_atoms: int = 8, elements=ELEMENTS) -> MolGraph:
    n = rng.randint(1, max_atoms)
    atoms = tuple(rng.choice(elements) for _ in range(n))
    bonds = tuple((rng.randrange(i), i, rng.choice((1, 1, 2, 3))) for i in range(1, n))
    return MolGraph(atoms, bonds)


def isomorphic(a: MolGraph, b: MolGraph) -> bool:
    """Brute force over every atom bijection; fine up to 8 atoms."""
    if sorted(a.atoms) != sorted(b.atoms) or len(a.bonds) != len(b.bonds):
        return False
    eb = {(frozenset((i, j)), o) for i, j, o in b.bonds}
    n = len(a.atoms)
    for perm in itertools.permutations(range(n)):
        if any(a.atoms[i] != b.atoms[perm[i]] for i in range(n)):
            continue
        if all((frozenset((perm[i], perm[j])), o) in eb for i, j, o in a.bonds):
            return True
    return False


@pytest.fixture(scope="session")
def small_bench():
    return generate_benchmark(BenchmarkConfig(**SMALL), seed=3)


@pytest.fixture(scope="session")
def default_bench():
    return generate_benchmark(BenchmarkConfig(), seed=17)


@pytest.fixture(scope="session")
def small_model(small_bench):
    from retroebm.pipeline import training_reactions
    from retroebm.proposer import train_onestep

    return train_onestep(training_reactions(small_bench), small_bench.rules)


def micro_benchmarks(n: int, start: int = 0):
    """First ``n`` feasible small worlds (<= 200 molecules, depth <= 3), by seed."""
    from retroebm.benchmark import InfeasibleConfigError

    out, seed = [], start
    while len(out) < n:
        try:
            out.append(generate_benchmark(BenchmarkConfig(**SMALL), seed))
        except InfeasibleConfigError:
            pass
        seed += 1
    return out


def enumerate_routes(target, model, inventory, max_depth):
    """Every complete route under tree semantics, as (log_prob, leaves) pairs.

    Written independently of the planners: plain recursion over all model
    outcomes, no beam, no ordering.
    """
    import math

    def solve(mol, depth, banned):
        # list of (logp, leaves) ways to close ``mol`` at tree depth ``depth``
        if depth >= max_depth:
            return []
        ways = []
        for o in model.outcomes(mol):
            if any(r in banned or r == mol for r in o.reactants):
                continue
            parts = [[(0.0, frozenset([r]))] if r in inventory else solve(r, depth + 1, banned | {mol})
                     for r in o.reactants]
            combos = [(o.logp, frozenset())]
            for options in parts:
                combos = [(lp + lp2, lv | lv2) for lp, lv in combos for lp2, lv2 in options]
            ways.extend(combos)
        return ways

    inventory = frozenset(inventory)
    return solve(target, 0, frozenset())


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
