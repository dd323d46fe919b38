# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twins of ``_kernels_py``; same signatures, same outputs."""

from libc.stdint cimport uint64_t

cdef uint64_t FNV_OFFSET = 0xCBF29CE484222325ULL
cdef uint64_t FNV_PRIME = 0x100000001B3ULL

cdef tuple _BOND_SYMBOL = ("", "", "=", "#")


cpdef object fnv1a64(bytes data):
    cdef uint64_t h = FNV_OFFSET
    cdef const unsigned char[:] view = data
    cdef Py_ssize_t i
    for i in range(view.shape[0]):
        h ^= view[i]
        h *= FNV_PRIME
    return h


cdef str _rooted(atoms, adj, int root, int parent, int radius):
    cdef list children
    cdef int nbr, order
    cdef str code
    if radius == 0:
        return atoms[root]
    children = []
    for nbr, order in adj[root]:
        if nbr == parent:
            continue
        code = _rooted(atoms, adj, nbr, root, radius - 1)
        children.append(_BOND_SYMBOL[order] + code)
    if not children:
        return atoms[root]
    children.sort()
    cdef Py_ssize_t k, last = len(children) - 1
    cdef list parts = [atoms[root]]
    for k in range(last):
        parts.append("(")
        parts.append(children[k])
        parts.append(")")
    parts.append(children[last])
    return "".join(parts)


def rooted_code(atoms, adj, int root, int parent, int radius):
    return _rooted(atoms, adj, root, parent, radius)


def centroids(adj):
    cdef Py_ssize_t n = len(adj)
    if n <= 2:
        return list(range(n))
    cdef list order = [0]
    cdef list parent = [-1] * n
    parent[0] = 0
    cdef Py_ssize_t pos = 0
    cdef int v, nbr, o
    while pos < len(order):
        v = order[pos]
        pos += 1
        for nbr, o in adj[v]:
            if parent[nbr] == -1:
                parent[nbr] = v
                order.append(nbr)
    cdef list size = [1] * n
    cdef Py_ssize_t k
    for k in range(n - 1, 0, -1):
        v = order[k]
        size[parent[v]] += size[v]
    cdef int best = n, worst
    cdef list found = []
    for v in range(n):
        worst = n - size[v]
        for nbr, o in adj[v]:
            if nbr != 0 and parent[nbr] == v and size[nbr] > worst:
                worst = size[nbr]
        if worst < best:
            best = worst
            found = [v]
        elif worst == best:
            found.append(v)
    return found


def canonical_code(atoms, adj):
    if len(atoms) == 1:
        return atoms[0]
    cdef str best = None, code
    for c in centroids(adj):
        code = _rooted(atoms, adj, c, -1, -1)
        if best is None or code < best:
            best = code
    return best


def environment_hashes(atoms, adj, int radius, int nbits):
    cdef set bits = set()
    cdef Py_ssize_t center, n = len(atoms)
    cdef int r
    cdef str code
    for center in range(n):
        for r in range(radius + 1):
            code = _rooted(atoms, adj, center, -1, r)
            bits.add(fnv1a64(code.encode()) % nbits)
    return bits
