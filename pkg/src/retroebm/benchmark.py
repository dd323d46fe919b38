"""Seeded synthetic reaction-network benchmarks.

Randomness comes from numpy's PCG64 bit generator (64-bit state, stream
fixed by the seed), consumed in a fixed order so that a ``(config, seed)``
pair always produces the same files byte for byte.

Construction:

1. sample an inventory of small capped trees (at most 4 atoms);
2. grow a reaction network by repeatedly applying a random rule forward to
   two pool molecules, drawing building blocks with Zipf-skewed popularity;
3. targets are the molecules whose minimum synthesis depth lies in
   ``[2, max_depth]``;
4. targets are shuffled and split 80/10/10.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from itertools import islice
from pathlib import Path
from typing import Iterator

import numpy as np

from .molcore import MolGraph, canonicalize
from .route import Route, Step
from .rxn import (
    DEFAULT_RULES,
    ReactionRecord,
    ReactionRule,
    _site_signature,
    apply_forward_rule,
    load_rules,
    save_rules,
)


class InfeasibleConfigError(RuntimeError):
    pass


BACKBONE = ("C", "N", "O", "S")
BACKBONE_P = (0.55, 0.2, 0.15, 0.1)
CAPS = ("Cl", "Br", "I", "F", "P")
CAPS_P = (0.25, 0.2, 0.15, 0.25, 0.15)


@dataclass
class BenchmarkConfig:
    inventory_size: int = 60
    molecule_budget: int = 2700
    max_depth: int = 6
    max_atoms: int = 20
    reference_cap: int = 8
    popularity_exponent: float = 1.0
    inventory_weight: float = 4.0
    rule_weights: list[float] | None = None
    max_attempts: int = 400_000
    rules: list[dict] | None = None

    def __post_init__(self) -> None:
        if self.inventory_size < 20:
            raise ValueError("inventory_size must be >= 20")
        if not 2 <= self.max_depth <= 6:
            raise ValueError("max_depth must lie in [2, 6]")
        if len(self.rule_list()) < 5:
            raise ValueError("need at least 5 rules")
        if self.rule_weights is not None and len(self.rule_weights) != len(self.rule_list()):
            raise ValueError("rule_weights must match the rule count")

    def rule_list(self) -> list[ReactionRule]:
        if self.rules is None:
            return list(DEFAULT_RULES)
        return [ReactionRule.from_json(r) for r in self.rules]

    @classmethod
    def from_json(cls, path: str | Path) -> "BenchmarkConfig":
        with open(path) as fh:
            return cls(**json.load(fh))


@dataclass
class Benchmark:
    rules: list[ReactionRule]
    inventory: frozenset[str]
    molecules: frozenset[str]
    reactions: list[ReactionRecord]
    splits: dict[str, list[str]]
    references: dict[str, list[Route]]
    depth: dict[str, int] = field(default_factory=dict)
    max_depth: int = 6

    @property
    def rule_by_id(self) -> dict[str, ReactionRule]:
        return {r.id: r for r in self.rules}

    def targets(self, split: str) -> list[str]:
        return list(self.splits[split])

    def save(self, out: str | Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        save_rules(self.rules, out / "rules.jsonl")
        (out / "inventory.txt").write_text("".join(s + "\n" for s in sorted(self.inventory)))
        with open(out / "reactions.jsonl", "w") as fh:
            for rec in self.reactions:
                fh.write(json.dumps(rec.to_json()) + "\n")
        with open(out / "splits.json", "w") as fh:
            json.dump({"max_depth": self.max_depth, **self.splits}, fh, indent=1)
            fh.write("\n")
        with open(out / "references.jsonl", "w") as fh:
            for target in sorted(self.references):
                routes = [r.to_json() for r in self.references[target]]
                fh.write(json.dumps({"target": target, "routes": routes}, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Benchmark":
        path = Path(path)
        rules = load_rules(path / "rules.jsonl")
        inventory = frozenset(line.strip() for line in (path / "inventory.txt").read_text().splitlines() if line.strip())
        with open(path / "reactions.jsonl") as fh:
            reactions = [ReactionRecord.from_json(json.loads(line)) for line in fh if line.strip()]
        with open(path / "splits.json") as fh:
            raw = json.load(fh)
        max_depth = int(raw.pop("max_depth", 6))
        references = {}
        with open(path / "references.jsonl") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    references[obj["target"]] = [Route.from_json(r) for r in obj["routes"]]
        molecules = set(inventory)
        for rec in reactions:
            molecules.add(rec.product)
            molecules.update(rec.reactants)
        return cls(
            rules=rules,
            inventory=inventory,
            molecules=frozenset(molecules),
            reactions=reactions,
            splits={k: list(v) for k, v in raw.items()},
            references=references,
            depth=min_synthesis_depth(inventory, reactions),
            max_depth=max_depth,
        )


def _random_block(rng: np.random.Generator) -> str:
    n_backbone = int(rng.choice([1, 2, 3], p=[0.3, 0.45, 0.25]))
    n_caps = int(rng.choice([1, 2], p=[0.5, 0.5])) if n_backbone < 3 else 1
    atoms = [str(rng.choice(BACKBONE, p=BACKBONE_P)) for _ in range(n_backbone)]
    bonds = []
    for k in range(1, n_backbone):
        parent = int(rng.integers(0, k))
        pair = {atoms[parent], atoms[k]}
        order = 2 if pair <= {"C", "N"} and rng.random() < 0.2 else 1
        bonds.append((parent, k, order))
    for _ in range(n_caps):
        anchor = int(rng.integers(0, n_backbone))
        atoms.append(str(rng.choice(CAPS, p=CAPS_P)))
        bonds.append((anchor, len(atoms) - 1, 1))
    return MolGraph(tuple(atoms), tuple(bonds)).canonical


def min_synthesis_depth(inventory, reactions) -> dict[str, int]:
    depth = {m: 0 for m in inventory}
    changed = True
    while changed:
        changed = False
        for rec in reactions:
            if rec.product in inventory:
                continue
            ds = [depth.get(r) for r in rec.reactants]
            if any(d is None for d in ds):
                continue
            d = 1 + max(ds)
            if d < depth.get(rec.product, 1 << 30):
                depth[rec.product] = d
                changed = True
    return depth


class _WeightedPool:
    """Molecules indexed by forward-reactive site for weighted sampling."""

    def __init__(self) -> None:
        self.members: dict[tuple[str, str], list[str]] = defaultdict(list)
        self.weights: dict[tuple[str, str], list[float]] = defaultdict(list)

    def add(self, smiles: str, weight: float) -> None:
        for site in sorted(_site_signature(smiles)):
            self.members[site].append(smiles)
            self.weights[site].append(weight)

    def draw(self, site: tuple[str, str], rng: np.random.Generator) -> str | None:
        members = self.members.get(site)
        if not members:
            return None
        w = np.asarray(self.weights[site])
        idx = int(np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right"))
        return members[min(idx, len(members) - 1)]


def generate_benchmark(config: BenchmarkConfig, seed: int) -> Benchmark:
    rng = np.random.Generator(np.random.PCG64(seed))
    rules = config.rule_list()

    inventory: list[str] = []
    seen: set[str] = set()
    tries = 0
    while len(inventory) < config.inventory_size:
        tries += 1
        if tries > 100 * config.inventory_size:
            raise InfeasibleConfigError("could not sample enough distinct inventory molecules")
        block = _random_block(rng)
        if block not in seen:
            seen.add(block)
            inventory.append(block)
    inventory.sort()
    inv_set = frozenset(inventory)

    # Zipf popularity over a random ordering of the inventory
    ranks = rng.permutation(len(inventory))
    # mean weight of an inventory molecule is inventory_weight; network products get 1.0
    popularity = (1.0 + ranks) ** (-config.popularity_exponent)
    popularity *= config.inventory_weight * len(inventory) / popularity.sum()

    pool = _WeightedPool()
    for smiles, w in zip(inventory, popularity):
        pool.add(smiles, float(w))

    rule_w = np.asarray(config.rule_weights or [1.0] * len(rules), dtype=float)
    rule_w = rule_w / rule_w.sum()

    depth = {m: 0 for m in inventory}
    reactions: list[ReactionRecord] = []
    seen_rxn: set[tuple[str, tuple[str, str], str]] = set()
    produced: list[str] = []
    attempts = 0
    while len(produced) < config.molecule_budget:
        attempts += 1
        if attempts > config.max_attempts:
            raise InfeasibleConfigError(
                f"molecule budget {config.molecule_budget} unreachable after {config.max_attempts} attempts"
            )
        rule = rules[int(rng.choice(len(rules), p=rule_w))]
        ea, eb, _ = rule.bond_pattern
        x = pool.draw((ea, rule.cap_a), rng)
        y = pool.draw((eb, rule.cap_b), rng)
        if x is None or y is None:
            continue
        product = apply_forward_rule(rule, (x, y))
        if product is None or product in inv_set:
            continue
        if len(product) > 3 * config.max_atoms:
            continue
        n_atoms = sum(1 for ch in product if ch.isupper())
        if n_atoms > config.max_atoms:
            continue
        d = 1 + max(depth[x], depth[y])
        if d > config.max_depth:
            continue
        reactants = tuple(sorted((x, y)))
        key = (product, reactants, rule.id)
        if key in seen_rxn:
            continue
        seen_rxn.add(key)
        reactions.append(ReactionRecord(product, reactants, rule.id))
        if product not in depth:
            depth[product] = d
            produced.append(product)
            pool.add(product, 1.0)
        elif d < depth[product]:
            depth[product] = d

    depth = min_synthesis_depth(inv_set, reactions)
    molecules = frozenset(inventory) | frozenset(produced)
    targets = sorted(m for m in produced if 2 <= depth[m] <= config.max_depth)
    order = rng.permutation(len(targets))
    shuffled = [targets[i] for i in order]
    n_train = int(round(0.8 * len(shuffled)))
    n_val = int(round(0.1 * len(shuffled)))
    splits = {
        "train": sorted(shuffled[:n_train]),
        "val": sorted(shuffled[n_train : n_train + n_val]),
        "test": sorted(shuffled[n_train + n_val :]),
    }
    bench = Benchmark(
        rules=rules,
        inventory=inv_set,
        molecules=molecules,
        reactions=reactions,
        splits=splits,
        references={},
        depth=depth,
        max_depth=config.max_depth,
    )
    for target in targets:
        bench.references[target] = extract_reference_routes(bench, target, config.reference_cap)
    return bench


def _producers(bench: Benchmark) -> dict[str, list[ReactionRecord]]:
    cached = getattr(bench, "_producer_index", None)
    if cached is not None:
        return cached
    index: dict[str, list[ReactionRecord]] = defaultdict(list)
    for rec in bench.reactions:
        index[rec.product].append(rec)
    depth = bench.depth
    for recs in index.values():
        # shallow producers first so truncation keeps short routes
        recs.sort(key=lambda r: (max(depth.get(x, 1 << 30) for x in r.reactants), r.reactants, r.rule_id))
    bench._producer_index = index  # type: ignore[attr-defined]
    return index


def extract_reference_routes(bench: Benchmark, target: str, cap: int = 8) -> list[Route]:
    """Enumerate network routes for ``target`` depth-first, up to ``cap``.

    Each choice of producing reaction for each intermediate gives one route.
    Inventory molecules are always leaves; no molecule repeats on a
    root-to-leaf path and routes are no deeper than ``bench.max_depth``.
    """
    if target in bench.inventory:
        raise ValueError(f"{target} is a starting material")
    producers = _producers(bench)
    if not producers.get(target):
        raise ValueError(f"{target} has no producing reaction")
    depth = bench.depth
    inventory = bench.inventory

    def expand(mol: str, budget: int, path: frozenset[str]) -> Iterator[list[Step]]:
        if budget <= 0:
            return
        for rec in producers.get(mol, ()):
            if any(r in path or r == mol for r in rec.reactants):
                continue
            if any(depth.get(r, 1 << 30) > budget - 1 for r in rec.reactants):
                continue
            step = Step(mol, rec.reactants, rec.rule_id, 0.0)
            yield from _combine(step, list(rec.reactants), budget - 1, path | {mol})

    def _combine(step: Step, reactants: list[str], budget: int, path: frozenset[str]) -> Iterator[list[Step]]:
        def rec(k: int) -> Iterator[list[Step]]:
            if k == len(reactants):
                yield []
                return
            r = reactants[k]
            if r in inventory:
                yield from rec(k + 1)
                return
            for sub in expand(r, budget, path):
                for rest in rec(k + 1):
                    yield sub + rest

        for tail in rec(0):
            yield [step] + tail

    routes = []
    for steps in islice(expand(target, bench.max_depth, frozenset()), cap):
        routes.append(Route(target, tuple(steps), 0.0))
    return routes


def reference_depth(routes: list[Route]) -> int:
    return min(r.depth for r in routes)


def save_config(config: BenchmarkConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(config), fh, indent=1, sort_keys=True)


def canonical_inventory(lines) -> frozenset[str]:
    return frozenset(canonicalize(s) for s in lines)
