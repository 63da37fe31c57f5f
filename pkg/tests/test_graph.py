import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acsma.graph import (
    MAX_LINKS,
    ConflictGraph,
    GraphTooLarge,
    enumerate_independent_sets,
)
from oracles import brute_force_independent_sets


@st.composite
def graphs(draw, max_links=12):
    n = draw(st.integers(1, max_links))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True)) if pairs else []
    return n, edges


@settings(max_examples=150, deadline=None)
@given(graphs())
def test_enumeration_matches_brute_force(g):
    n, edges = g
    fam = enumerate_independent_sets(ConflictGraph(n, edges))
    assert set(fam.as_sets()) == set(brute_force_independent_sets(n, edges))
    assert len(fam.as_sets()) == len(set(fam.as_sets()))


@settings(max_examples=60, deadline=None)
@given(graphs(10))
def test_family_invariants(g):
    n, edges = g
    graph = ConflictGraph(n, edges)
    fam = enumerate_independent_sets(graph)
    assert fam.masks[0] == 0
    assert np.all(np.diff(fam.masks) > 0)
    assert fam.membership.shape == (len(fam), n)
    for i, m in enumerate(fam.masks):
        assert graph.is_independent(int(m))
        assert fam.index(int(m)) == i
    # every singleton is independent
    for l in range(n):
        assert fam.index(1 << l) > 0


def test_topology_a_sets():
    g = ConflictGraph(4, [(0, 1), (1, 2), (1, 3), (2, 3)])
    sets = set(enumerate_independent_sets(g).as_sets())
    expected = {frozenset(), frozenset({0}), frozenset({1}), frozenset({2}), frozenset({3}),
                frozenset({0, 2}), frozenset({0, 3})}
    assert sets == expected


@pytest.mark.parametrize("n", [1, 5, 12])
def test_extreme_graphs(n):
    assert len(enumerate_independent_sets(ConflictGraph(n))) == 2**n
    assert len(enumerate_independent_sets(ConflictGraph.complete(n))) == n + 1


def test_non_independent_mask_lookup():
    fam = enumerate_independent_sets(ConflictGraph(2, [(0, 1)]))
    with pytest.raises(KeyError):
        fam.index(0b11)


def test_validation():
    with pytest.raises(GraphTooLarge):
        ConflictGraph(MAX_LINKS + 1)
    with pytest.raises(ValueError):
        ConflictGraph(0)
    with pytest.raises(ValueError):
        ConflictGraph(3, [(1, 1)])
    with pytest.raises(ValueError):
        ConflictGraph(3, [(0, 3)])
    with pytest.raises(ValueError):
        ConflictGraph(2, names=["x", "x"])
    g = ConflictGraph(3, [(2, 0), (0, 2)], names=["a", "b", "c"])
    assert g.conflicts == frozenset({(0, 2)})
    assert g.index_of("c") == 2
    with pytest.raises(KeyError):
        g.index_of("z")
    assert g.adjacency()[0, 2] and g.adjacency()[2, 0]
