"""Bond-split reaction rules and the forward-synthesis oracle.

A rule ``(A, B, order)`` with caps ``(cap_a, cap_b)`` cuts an ``A-B`` bond of
the given order in the retro direction and caps the two fragments; the
forward direction removes one ``cap_a`` on an ``A`` atom and one ``cap_b`` on
a ``B`` atom and joins the two atoms. Molecules are handled as canonical
SMILES strings throughout; reactant sets are sorted 2-tuples of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

from . import kernels
from .molcore import ELEMENTS, MolGraph, bits_to_mask, canonicalize, fingerprint_mask, parse_smiles, tanimoto_mask

ReactantSet = tuple[str, str]


@dataclass(frozen=True)
class ReactionRule:
    id: str
    bond_pattern: tuple[str, str, int]
    cap_a: str
    cap_b: str

    def __post_init__(self) -> None:
        a, b, order = self.bond_pattern
        for e in (a, b, self.cap_a, self.cap_b):
            if e not in ELEMENTS:
                raise ValueError(f"rule {self.id}: unknown element {e!r}")
        if order not in (1, 2, 3):
            raise ValueError(f"rule {self.id}: bond order {order}")

    def to_json(self) -> dict:
        a, b, order = self.bond_pattern
        return {"id": self.id, "bond": [a, b, order], "cap_a": self.cap_a, "cap_b": self.cap_b}

    @classmethod
    def from_json(cls, obj: dict) -> "ReactionRule":
        a, b, order = obj["bond"]
        return cls(obj["id"], (a, b, int(order)), obj["cap_a"], obj["cap_b"])


@dataclass(frozen=True)
class ReactionRecord:
    product: str
    reactants: ReactantSet
    rule_id: str

    def to_json(self) -> dict:
        return {"product": self.product, "reactants": list(self.reactants), "rule_id": self.rule_id}

    @classmethod
    def from_json(cls, obj: dict) -> "ReactionRecord":
        return cls(obj["product"], tuple(sorted(obj["reactants"])), obj["rule_id"])


def reactant_key(reactants: Sequence[str]) -> str:
    """Dot-joined serialization of a reactant set (for display and files)."""
    return ".".join(reactants)


# Twelve rules over backbone bonds; halogen siblings share a bond pattern.
DEFAULT_RULES: tuple[ReactionRule, ...] = (
    ReactionRule("r01", ("C", "N", 1), "Cl", "F"),
    ReactionRule("r02", ("C", "N", 1), "Br", "F"),
    ReactionRule("r03", ("C", "N", 1), "I", "F"),
    ReactionRule("r04", ("C", "O", 1), "Cl", "F"),
    ReactionRule("r05", ("C", "O", 1), "Br", "F"),
    ReactionRule("r06", ("C", "C", 1), "Br", "I"),
    ReactionRule("r07", ("C", "C", 1), "Cl", "P"),
    ReactionRule("r08", ("C", "S", 1), "Cl", "F"),
    ReactionRule("r09", ("C", "C", 2), "P", "P"),
    ReactionRule("r10", ("N", "S", 1), "Cl", "F"),
    ReactionRule("r11", ("C", "N", 2), "I", "P"),
    ReactionRule("r12", ("O", "S", 1), "Cl", "F"),
)


def load_rules(path: str | Path) -> list[ReactionRule]:
    rules = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                rules.append(ReactionRule.from_json(json.loads(line)))
    if len({r.id for r in rules}) != len(rules):
        raise ValueError("duplicate rule id")
    return rules


def save_rules(rules: Iterable[ReactionRule], path: str | Path) -> None:
    with open(path, "w") as fh:
        for r in rules:
            fh.write(json.dumps(r.to_json()) + "\n")


def _component(adj, start: int, blocked: int) -> list[int]:
    seen = {start, blocked}
    out = [start]
    stack = [start]
    while stack:
        v = stack.pop()
        for nbr, _ in adj[v]:
            if nbr not in seen:
                seen.add(nbr)
                out.append(nbr)
                stack.append(nbr)
    return out


def _fragment_code(mol: MolGraph, nodes: list[int], anchor: int, cap: str) -> str:
    index = {v: k for k, v in enumerate(nodes)}
    atoms = [mol.atoms[v] for v in nodes]
    adj: list[list[tuple[int, int]]] = [[] for _ in nodes]
    for v in nodes:
        k = index[v]
        for nbr, order in mol.adjacency[v]:
            if nbr in index:
                adj[k].append((index[nbr], order))
    cap_idx = len(atoms)
    atoms.append(cap)
    adj.append([(index[anchor], 1)])
    adj[index[anchor]].append((cap_idx, 1))
    return kernels.canonical_code(atoms, adj)


def _raw_retro(rule: ReactionRule, mol: MolGraph) -> set[ReactantSet]:
    ea, eb, order = rule.bond_pattern
    found: set[ReactantSet] = set()
    for i, j, o in mol.bonds:
        if o != order:
            continue
        for a, b in ((i, j), (j, i)):
            if mol.atoms[a] != ea or mol.atoms[b] != eb:
                continue
            frag_a = _fragment_code(mol, _component(mol.adjacency, a, b), a, rule.cap_a)
            frag_b = _fragment_code(mol, _component(mol.adjacency, b, a), b, rule.cap_b)
            found.add(tuple(sorted((frag_a, frag_b))))
    return found


@lru_cache(maxsize=500_000)
def _retro_cached(rule: ReactionRule, product: str) -> tuple[ReactantSet, ...]:
    mol = parse_smiles(product)
    # Keep only outcomes the forward rule maps back onto this product; a
    # fragment that already carries a second cap site can join elsewhere.
    valid = [rs for rs in _raw_retro(rule, mol) if _forward_cached(rule, rs) == product]
    return tuple(sorted(valid))


def apply_retro_rule(rule: ReactionRule, product: MolGraph | str) -> list[ReactantSet]:
    """All reactant sets from which ``rule`` forward-synthesizes ``product``.

    Sorted lexicographically (as tuples of canonical strings); empty if the
    rule does not match.
    """
    smiles = canonicalize(product) if isinstance(product, str) else product.canonical
    return list(_retro_cached(rule, smiles))


def _sites(mol: MolGraph, center: str, cap: str) -> list[tuple[int, int]]:
    out = []
    for k, element in enumerate(mol.atoms):
        if element != cap or len(mol.adjacency[k]) != 1:
            continue
        nbr, order = mol.adjacency[k][0]
        if order == 1 and mol.atoms[nbr] == center:
            out.append((k, nbr))
    return out


def _join_graph(x: MolGraph, x_site: tuple[int, int], y: MolGraph, y_site: tuple[int, int], order: int):
    x_cap, x_anchor = x_site
    y_cap, y_anchor = y_site
    atoms: list[str] = []
    remap_x, remap_y = {}, {}
    for k, element in enumerate(x.atoms):
        if k != x_cap:
            remap_x[k] = len(atoms)
            atoms.append(element)
    for k, element in enumerate(y.atoms):
        if k != y_cap:
            remap_y[k] = len(atoms)
            atoms.append(element)
    adj: list[list[tuple[int, int]]] = [[] for _ in atoms]
    for remap, mol in ((remap_x, x), (remap_y, y)):
        for i, j, o in mol.bonds:
            if i in remap and j in remap:
                adj[remap[i]].append((remap[j], o))
                adj[remap[j]].append((remap[i], o))
    a, b = remap_x[x_anchor], remap_y[y_anchor]
    adj[a].append((b, order))
    adj[b].append((a, order))
    return atoms, adj


def _best_join(rule: ReactionRule, reactants: ReactantSet):
    """Smallest canonical product over every cap pairing, with its graph."""
    ea, eb, order = rule.bond_pattern
    m0, m1 = parse_smiles(reactants[0]), parse_smiles(reactants[1])
    best = None
    for x, y in ((m0, m1), (m1, m0)):
        for xs in _sites(x, ea, rule.cap_a):
            for ys in _sites(y, eb, rule.cap_b):
                graph = _join_graph(x, xs, y, ys, order)
                product = kernels.canonical_code(*graph)
                if best is None or product < best[0]:
                    best = (product, graph)
    return best


@lru_cache(maxsize=1_000_000)
def _forward_cached(rule: ReactionRule, reactants: ReactantSet) -> str | None:
    best = _best_join(rule, reactants)
    return None if best is None else best[0]


@lru_cache(maxsize=1_000_000)
def _forward_with_mask(rule: ReactionRule, reactants: ReactantSet, radius: int, nbits: int) -> tuple[str, int] | None:
    # the mask is hashed from the joined graph, so the product is never re-parsed
    best = _best_join(rule, reactants)
    if best is None:
        return None
    return best[0], bits_to_mask(kernels.environment_hashes(*best[1], radius, nbits), nbits)


def apply_forward_rule(rule: ReactionRule, reactants: Sequence[MolGraph | str]) -> str | None:
    """Canonical product of joining the two reactants, or ``None``.

    When several cap pairings are possible the lexicographically smallest
    canonical product wins.
    """
    if len(reactants) != 2:
        raise ValueError(f"forward rules take exactly 2 reactants, got {len(reactants)}")
    smiles = [canonicalize(r) if isinstance(r, str) else r.canonical for r in reactants]
    return _forward_cached(rule, tuple(sorted(smiles)))


@lru_cache(maxsize=200_000)
def _site_signature(smiles: str) -> frozenset[tuple[str, str]]:
    """``(center, cap)`` element pairs present as forward-reactive sites."""
    mol = parse_smiles(smiles)
    out = set()
    for k, element in enumerate(mol.atoms):
        if len(mol.adjacency[k]) == 1:
            nbr, order = mol.adjacency[k][0]
            if order == 1:
                out.add((mol.atoms[nbr], element))
    return frozenset(out)


def forward_oracle(
    materials: Iterable[str],
    target: str,
    rules: Sequence[ReactionRule],
    depth_limit: int,
    width: int = 512,
    radius: int = 2,
    nbits: int = 1024,
) -> str:
    """Best molecule reachable from ``materials`` by bounded forward search.

    Level by level, every rule is applied to every pair that involves at
    least one molecule added on the previous level (earlier pairs were
    already tried). At most ``width`` new products survive per level, ranked
    by Tanimoto similarity to ``target``. Returns the reachable molecule
    most similar to the target, ties broken by canonical string; the search
    stops early once the target itself is produced.
    """
    pool = sorted(set(materials))
    if not pool:
        raise ValueError("forward_oracle needs at least one material")
    if target in pool:
        return target
    return _forward_oracle_cached(tuple(pool), target, tuple(rules), depth_limit, width, radius, nbits)


@lru_cache(maxsize=100_000)
def _forward_oracle_cached(
    materials: tuple[str, ...],
    target: str,
    rules: tuple[ReactionRule, ...],
    depth_limit: int,
    width: int,
    radius: int,
    nbits: int,
) -> str:
    pool = list(materials)
    target_mask = fingerprint_mask(target, radius, nbits)

    masks = {m: fingerprint_mask(m, radius, nbits) for m in pool}

    def sim(s: str) -> float:
        return tanimoto_mask(masks[s], target_mask)

    known = set(pool)
    holders: dict[tuple[str, str], list[str]] = {}

    def index(mols: Iterable[str]) -> None:
        for m in mols:
            for site in _site_signature(m):
                holders.setdefault(site, []).append(m)

    index(pool)
    frontier = pool
    for _ in range(depth_limit):
        fresh = set(frontier)
        products: set[str] = set()
        for rule in rules:
            ea, eb, _ = rule.bond_pattern
            site_a, site_b = (ea, rule.cap_a), (eb, rule.cap_b)
            a_side, b_side = holders.get(site_a), holders.get(site_b)
            if not a_side or not b_side:
                continue
            pairs = set()
            for x in a_side:
                x_new = x in fresh
                for y in b_side:
                    if x_new or y in fresh:
                        pairs.add((x, y) if x <= y else (y, x))
            for pair in sorted(pairs):
                hit = _forward_with_mask(rule, pair, radius, nbits)
                if hit is None or hit[0] in known:
                    continue
                product = hit[0]
                if product == target:
                    return target
                products.add(product)
                masks[product] = hit[1]
        if not products:
            break
        ranked = sorted(products, key=lambda s: (-sim(s), s))[:width]
        known.update(ranked)
        pool.extend(ranked)
        index(ranked)
        frontier = ranked
    return min(pool, key=lambda s: (-sim(s), s))
