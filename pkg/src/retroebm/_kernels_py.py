"""Pure-Python reference kernels.

These mirror the compiled ``_ckernels`` extension function for function;
``retroebm.kernels`` picks whichever is importable.

Graphs are passed as ``atoms`` (sequence of element strings) and ``adj``
(sequence of tuples of ``(neighbor, order)``).
"""

from __future__ import annotations

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_BOND_SYMBOL = ("", "", "=", "#")


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


def rooted_code(atoms, adj, root: int, parent: int, radius: int) -> str:
    """SMILES-style code of the subtree hanging from ``root``.

    Children are emitted in lexicographic order of their own codes, the
    last one continuing the chain and the rest as branches. ``radius < 0``
    means unbounded.
    """
    if radius == 0:
        return atoms[root]
    children = []
    for nbr, order in adj[root]:
        if nbr == parent:
            continue
        children.append(_BOND_SYMBOL[order] + rooted_code(atoms, adj, nbr, root, radius - 1))
    if not children:
        return atoms[root]
    children.sort()
    return atoms[root] + "".join(["(" + c + ")" for c in children[:-1]]) + children[-1]


def centroids(adj) -> list[int]:
    n = len(adj)
    if n <= 2:
        return list(range(n))
    order = [0]
    parent = [-1] * n
    parent[0] = 0
    for v in order:
        for nbr, _ in adj[v]:
            if parent[nbr] == -1:
                parent[nbr] = v
                order.append(nbr)
    size = [1] * n
    for v in reversed(order[1:]):
        size[parent[v]] += size[v]
    best = n
    found: list[int] = []
    for v in range(n):
        worst = n - size[v]
        for nbr, _ in adj[v]:
            # root is its own parent, so nbr == 0 is never a child
            if nbr != 0 and parent[nbr] == v and size[nbr] > worst:
                worst = size[nbr]
        if worst < best:
            best = worst
            found = [v]
        elif worst == best:
            found.append(v)
    return found


def canonical_code(atoms, adj) -> str:
    if len(atoms) == 1:
        return atoms[0]
    return min(rooted_code(atoms, adj, c, -1, -1) for c in centroids(adj))


def environment_hashes(atoms, adj, radius: int, nbits: int) -> set[int]:
    bits = set()
    for center in range(len(atoms)):
        for r in range(radius + 1):
            code = rooted_code(atoms, adj, center, -1, r)
            bits.add(fnv1a64(code.encode()) % nbits)
    return bits
