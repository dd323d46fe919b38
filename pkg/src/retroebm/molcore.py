"""Acyclic molecular graphs in a restricted SMILES dialect.

Grammar (no rings, hydrogens, charges, stereo or aromaticity)::

    molecule := chain
    chain    := (bond? atom | '(' chain ')')*
    atom     := 'Cl' | 'Br' | 'C' | 'N' | 'O' | 'S' | 'P' | 'F' | 'I'
    bond     := '=' | '#'
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable

from . import kernels

ELEMENTS = ("C", "N", "O", "S", "P", "F", "Cl", "Br", "I")
_ELEMENT_SET = frozenset(ELEMENTS)
_BOND_ORDER = {"=": 2, "#": 3}

DEFAULT_RADIUS = 2
DEFAULT_NBITS = 1024


class SmilesError(ValueError):
    """Base class for parse failures."""


class UnbalancedParenthesisError(SmilesError):
    pass


class UnknownElementError(SmilesError):
    pass


class DanglingBondError(SmilesError):
    pass


class RingClosureError(SmilesError):
    pass


class InvalidGraphError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MolGraph:
    """Connected acyclic labeled graph.

    Equality and hashing go through the canonical string, so two isomorphic
    graphs compare equal.
    """

    atoms: tuple[str, ...]
    bonds: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self) -> None:
        n = len(self.atoms)
        if n == 0:
            raise InvalidGraphError("empty molecule")
        for a in self.atoms:
            if a not in _ELEMENT_SET:
                raise InvalidGraphError(f"unknown element {a!r}")
        if len(self.bonds) != n - 1:
            raise InvalidGraphError("a tree needs exactly |atoms| - 1 bonds")
        seen = set()
        for i, j, order in self.bonds:
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidGraphError(f"bond ({i}, {j}) out of range")
            if i == j:
                raise InvalidGraphError("self-loop")
            if order not in (1, 2, 3):
                raise InvalidGraphError(f"bond order {order}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidGraphError("duplicate bond")
            seen.add(key)
        # n - 1 distinct edges + connected <=> tree
        reached = {0}
        stack = [0]
        while stack:
            v = stack.pop()
            for nbr, _ in self.adjacency[v]:
                if nbr not in reached:
                    reached.add(nbr)
                    stack.append(nbr)
        if len(reached) != n:
            raise InvalidGraphError("molecule graph is disconnected")

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, int], ...], ...]:
        adj: list[list[tuple[int, int]]] = [[] for _ in self.atoms]
        for i, j, order in self.bonds:
            adj[i].append((j, order))
            adj[j].append((i, order))
        return tuple(tuple(x) for x in adj)

    @cached_property
    def canonical(self) -> str:
        return kernels.canonical_code(self.atoms, self.adjacency)

    def degree(self, i: int) -> int:
        return len(self.adjacency[i])

    @property
    def num_atoms(self) -> int:
        return len(self.atoms)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MolGraph):
            return NotImplemented
        return self.canonical == other.canonical

    def __hash__(self) -> int:
        return hash(self.canonical)

    def __repr__(self) -> str:
        return f"MolGraph({self.canonical!r})"

    def relabeled(self, perm: list[int]) -> "MolGraph":
        """Same molecule with atom ``i`` moved to index ``perm[i]``."""
        atoms = [""] * len(self.atoms)
        for i, a in enumerate(self.atoms):
            atoms[perm[i]] = a
        bonds = tuple((perm[i], perm[j], o) for i, j, o in self.bonds)
        return MolGraph(tuple(atoms), bonds)


def _tokenize_atom(text: str, pos: int) -> tuple[str, int]:
    two = text[pos : pos + 2]
    if two in ("Cl", "Br"):
        return two, pos + 2
    ch = text[pos]
    if ch in _ELEMENT_SET:
        return ch, pos + 1
    if ch.isdigit() or ch == "%":
        raise RingClosureError(f"ring closure {ch!r} at {pos} is not supported")
    raise UnknownElementError(f"unknown element symbol {ch!r} at {pos}")


def _parse(text: str) -> MolGraph:
    if not text:
        raise SmilesError("empty SMILES")
    atoms: list[str] = []
    bonds: list[tuple[int, int, int]] = []
    stack: list[int] = []
    prev = -1
    pending = 0  # bond order waiting for its right-hand atom, 0 = none
    pos = 0
    while pos < len(text):
        ch = text[pos]
        if ch == "(":
            if prev < 0:
                raise UnbalancedParenthesisError(f"branch opened before any atom at {pos}")
            if pending:
                raise DanglingBondError(f"bond symbol before '(' at {pos}")
            if text[pos + 1 : pos + 2] == ")":
                raise SmilesError(f"empty branch at {pos}")
            stack.append(prev)
            pos += 1
        elif ch == ")":
            if not stack:
                raise UnbalancedParenthesisError(f"unmatched ')' at {pos}")
            if pending:
                raise DanglingBondError(f"bond symbol before ')' at {pos}")
            prev = stack.pop()
            pos += 1
        elif ch in _BOND_ORDER:
            if prev < 0 or pending:
                raise DanglingBondError(f"bond symbol {ch!r} at {pos} has no left atom")
            pending = _BOND_ORDER[ch]
            pos += 1
        else:
            element, pos = _tokenize_atom(text, pos)
            idx = len(atoms)
            atoms.append(element)
            if prev >= 0:
                bonds.append((prev, idx, pending or 1))
            pending = 0
            prev = idx
    if stack:
        raise UnbalancedParenthesisError("unclosed '('")
    if pending:
        raise DanglingBondError("SMILES ends with a bond symbol")
    return MolGraph(tuple(atoms), tuple(bonds))


@lru_cache(maxsize=200_000)
def parse_smiles(text: str) -> MolGraph:
    """Parse a SMILES-subset string into a :class:`MolGraph`."""
    return _parse(text)


def canonical_smiles(mol: MolGraph) -> str:
    return mol.canonical


@lru_cache(maxsize=200_000)
def canonicalize(text: str) -> str:
    """Canonical form of a SMILES-subset string."""
    return parse_smiles(text).canonical


@dataclass(frozen=True)
class Fingerprint:
    bits: frozenset[int]
    nbits: int = DEFAULT_NBITS

    def __post_init__(self) -> None:
        if self.nbits <= 0:
            raise ValueError("nbits must be positive")
        if any(b < 0 or b >= self.nbits for b in self.bits):
            raise ValueError("bit index out of range")

    def __len__(self) -> int:
        return len(self.bits)


def morgan_fingerprint(
    mol: MolGraph, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS
) -> Fingerprint:
    """Circular fingerprint over rooted atom environments.

    Every environment of radius ``0..radius`` is written as its rooted
    canonical string, hashed with FNV-1a 64 and folded modulo ``nbits``.
    """
    if radius < 0:
        raise ValueError("radius must be >= 0")
    if nbits < 64:
        raise ValueError("nbits must be >= 64")
    return _fingerprint_cached(mol.canonical, radius, nbits)


@lru_cache(maxsize=200_000)
def _fingerprint_cached(smiles: str, radius: int, nbits: int) -> Fingerprint:
    mol = parse_smiles(smiles)
    bits = kernels.environment_hashes(mol.atoms, mol.adjacency, radius, nbits)
    return Fingerprint(frozenset(bits), nbits)


def fingerprint_of(smiles: str, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS) -> Fingerprint:
    """Fingerprint of a canonical SMILES string (cached)."""
    return _fingerprint_cached(smiles, radius, nbits)


@lru_cache(maxsize=200_000)
def fingerprint_mask(smiles: str, radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS) -> int:
    """Fingerprint of a canonical SMILES string packed into an int bitmask."""
    return bits_to_mask(_fingerprint_cached(smiles, radius, nbits).bits, nbits)


def bits_to_mask(bits, nbits: int) -> int:
    buf = bytearray((nbits + 7) // 8)
    for b in bits:
        buf[b >> 3] |= 1 << (b & 7)
    return int.from_bytes(buf, "little")


def tanimoto_mask(a: int, b: int) -> float:
    union = (a | b).bit_count()
    if union == 0:
        return 1.0
    return (a & b).bit_count() / union


def tanimoto(a: Fingerprint, b: Fingerprint) -> float:
    """|a & b| / |a | b|; two empty fingerprints count as identical."""
    if a.nbits != b.nbits:
        raise ValueError(f"fingerprint sizes differ: {a.nbits} vs {b.nbits}")
    union = len(a.bits | b.bits)
    if union == 0:
        return 1.0
    return len(a.bits & b.bits) / union


def fingerprint_union(
    mols: Iterable[MolGraph | str], radius: int = DEFAULT_RADIUS, nbits: int = DEFAULT_NBITS
) -> Fingerprint:
    """Bitwise OR of member fingerprints."""
    bits: set[int] = set()
    count = 0
    for m in mols:
        smiles = m if isinstance(m, str) else m.canonical
        bits |= _fingerprint_cached(smiles, radius, nbits).bits
        count += 1
    if count == 0:
        raise ValueError("fingerprint_union of an empty set")
    return Fingerprint(frozenset(bits), nbits)
