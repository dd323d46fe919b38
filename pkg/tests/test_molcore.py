import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import isomorphic, random_tree
from retroebm import kernels
from retroebm.molcore import (
    DanglingBondError,
    Fingerprint,
    InvalidGraphError,
    MolGraph,
    RingClosureError,
    SmilesError,
    UnbalancedParenthesisError,
    UnknownElementError,
    canonical_smiles,
    canonicalize,
    fingerprint_union,
    morgan_fingerprint,
    parse_smiles,
    tanimoto,
)


def test_parse_single_atom():
    m = parse_smiles("C")
    assert m.atoms == ("C",)
    assert m.bonds == ()


def test_parse_double_bond():
    m = parse_smiles("C=O")
    assert m.atoms == ("C", "O")
    assert m.bonds == ((0, 1, 2),)


def test_parse_branch_degree():
    m = parse_smiles("CC(Cl)N")
    assert m.num_atoms == 4
    assert m.degree(1) == 3
    assert sorted(m.atoms[j] for j, _ in m.adjacency[1]) == ["C", "Cl", "N"]


def test_two_letter_symbols_are_greedy():
    assert parse_smiles("CCl").atoms == ("C", "Cl")
    assert parse_smiles("BrC#N").atoms == ("Br", "C", "N")
    assert parse_smiles("BrC#N").bonds[1] == (1, 2, 3)


@pytest.mark.parametrize(
    "text, err",
    [
        ("C(", UnbalancedParenthesisError),
        ("C)C", UnbalancedParenthesisError),
        ("(C)", UnbalancedParenthesisError),
        ("CX", UnknownElementError),
        ("c1", UnknownElementError),
        ("C=", DanglingBondError),
        ("=C", DanglingBondError),
        ("C=(C)", DanglingBondError),
        ("C==C", DanglingBondError),
        ("C1CC1", RingClosureError),
        ("", SmilesError),
        ("C()", SmilesError),
    ],
)
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_smiles(text)


def test_parse_errors_are_distinct_types():
    kinds = {UnbalancedParenthesisError, UnknownElementError, DanglingBondError, RingClosureError}
    assert len(kinds) == 4
    assert all(issubclass(k, SmilesError) for k in kinds)


@pytest.mark.parametrize(
    "atoms, bonds",
    [
        ((), ()),
        (("C", "C"), ()),
        (("C", "C", "C"), ((0, 1, 1), (1, 0, 1))),
        (("C", "C"), ((0, 0, 1),)),
        (("C", "C"), ((0, 2, 1),)),
        (("C", "C"), ((0, 1, 4),)),
        (("C", "Xe"), ((0, 1, 1),)),
        (("C", "C", "C", "C"), ((0, 1, 1), (1, 0, 2), (2, 3, 1))),
    ],
)
def test_invalid_graphs(atoms, bonds):
    with pytest.raises(InvalidGraphError):
        MolGraph(atoms, bonds)


def test_canonical_examples():
    assert canonicalize("C(N)O") == canonicalize("C(O)N")
    assert canonical_smiles(parse_smiles("O")) == "O"
    assert canonicalize("OCN") == canonicalize("NCO")
    assert canonicalize("CC") != canonicalize("C=C")


def test_canonical_relabeling_with_isomorphism_oracle():
    rng = random.Random(7)
    for _ in range(300):
        m = random_tree(rng, 8)
        code = m.canonical
        for _ in range(3):
            perm = list(range(m.num_atoms))
            rng.shuffle(perm)
            assert m.relabeled(perm).canonical == code
        back = parse_smiles(code)
        assert isomorphic(back, m)
        assert back.canonical == code


def test_canonical_separates_non_isomorphic_pairs():
    # the oracle decides isomorphism; canonical equality must agree with it
    rng = random.Random(11)
    trees = [random_tree(rng, 5, ("C", "N", "O")) for _ in range(250)]
    for i in range(0, len(trees) - 1, 2):
        a, b = trees[i], trees[i + 1]
        assert (a.canonical == b.canonical) == isomorphic(a, b)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_is_stable(seed):
    m = random_tree(random.Random(seed), 12)
    c = canonical_smiles(m)
    assert canonical_smiles(parse_smiles(c)) == c
    assert parse_smiles(c).num_atoms == m.num_atoms
    assert len(parse_smiles(c).bonds) == m.num_atoms - 1


def test_equality_goes_through_canonical_form():
    assert parse_smiles("C(N)O") == parse_smiles("NCO")
    assert hash(parse_smiles("C(N)O")) == hash(parse_smiles("OCN"))
    assert parse_smiles("CN") != parse_smiles("CO")


def test_fingerprint_single_atom():
    assert len(morgan_fingerprint(parse_smiles("C"), radius=0)) == 1


def test_fingerprint_separates_co_cn():
    a = morgan_fingerprint(parse_smiles("CO"), radius=1, nbits=1024)
    b = morgan_fingerprint(parse_smiles("CN"), radius=1, nbits=1024)
    assert a.bits != b.bits


def test_fingerprint_environment_count_without_collisions():
    # distinct rooted environments of CCO up to radius 1: C, O, C(C), C(O)... counted by hand
    # radius 0: {C, O}; radius 1: {CC, CCO-centered, OC}
    fp = morgan_fingerprint(parse_smiles("CCO"), radius=1, nbits=1 << 20)
    assert len(fp) == 5


def test_fingerprint_invariant_under_relabeling():
    rng = random.Random(3)
    for _ in range(200):
        m = random_tree(rng, 10)
        perm = list(range(m.num_atoms))
        rng.shuffle(perm)
        assert morgan_fingerprint(m).bits == morgan_fingerprint(m.relabeled(perm)).bits


def test_fingerprint_bits_in_range():
    fp = morgan_fingerprint(parse_smiles("CC(=O)NS(Cl)C#N"), radius=3, nbits=64)
    assert fp.nbits == 64
    assert all(0 <= b < 64 for b in fp.bits)


@pytest.mark.parametrize("radius, nbits", [(-1, 1024), (2, 32)])
def test_fingerprint_rejects_bad_config(radius, nbits):
    with pytest.raises(ValueError):
        morgan_fingerprint(parse_smiles("CC"), radius, nbits)


def test_fnv1a_reference_vectors():
    # published FNV-1a 64 test vectors
    assert kernels.fnv1a64(b"") == 0xCBF29CE484222325
    assert kernels.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert kernels.fnv1a64(b"foobar") == 0x85944171F73967E8


def test_tanimoto_definition():
    a = Fingerprint(frozenset({1, 2, 3}), 64)
    b = Fingerprint(frozenset({2, 3, 4}), 64)
    assert tanimoto(a, b) == 0.5
    assert tanimoto(a, a) == 1.0
    assert tanimoto(a, Fingerprint(frozenset({9}), 64)) == 0.0
    empty = Fingerprint(frozenset(), 64)
    assert tanimoto(empty, empty) == 1.0
    assert tanimoto(a, empty) == 0.0


def test_tanimoto_size_mismatch():
    with pytest.raises(ValueError):
        tanimoto(Fingerprint(frozenset({1}), 64), Fingerprint(frozenset({1}), 128))


@settings(max_examples=100, deadline=None)
@given(st.frozensets(st.integers(0, 63)), st.frozensets(st.integers(0, 63)))
def test_tanimoto_properties(x, y):
    a, b = Fingerprint(x, 64), Fingerprint(y, 64)
    s = tanimoto(a, b)
    assert s == tanimoto(b, a)
    assert 0.0 <= s <= 1.0
    if x or y:
        assert (s == 1.0) == (x == y)


def test_fingerprint_union():
    a, b = parse_smiles("CCl"), parse_smiles("NS=O")
    assert fingerprint_union([a]) == morgan_fingerprint(a)
    assert fingerprint_union([a, b]) == fingerprint_union([b, a])
    assert fingerprint_union([a, b]).bits >= morgan_fingerprint(a).bits
    assert fingerprint_union(["CCl", b]) == fingerprint_union([a, b])
    with pytest.raises(ValueError):
        fingerprint_union([])
