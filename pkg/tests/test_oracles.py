"""Brute-force graphs against hand cases, an independent triple loop and known inclusions."""

import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from grng.metric import RejectedInputError
from grng.oracles import (
    OracleCapExceeded,
    UndirectedGraph,
    brute_gg,
    brute_grng,
    brute_knn,
    brute_mst,
    brute_rng,
    glune_contains,
    glune_contains_d,
    knn_graph,
    lune_contains,
    rng_neighbors_of_query,
)


def triple_loop_rng(pts):
    """Deliberately naive, shares nothing with the library beyond the definition."""

    def dist(a, b):
        return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))

    n = len(pts)
    out = set()
    for i in range(n):
        for j in range(i + 1, n):
            dij = dist(pts[i], pts[j])
            if not any(
                max(dist(pts[k], pts[i]), dist(pts[k], pts[j])) < dij
                for k in range(n)
                if k not in (i, j)
            ):
                out.add((i, j))
    return out


distinct_points = st.lists(
    st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=2, max_size=25, unique=True
).map(lambda ps: [(x / 10.0, y / 10.0) for x, y in ps])


# --- predicates -----------------------------------------------------------


def test_lune_examples():
    assert lune_contains((0.0,), (2.0,), (1.0,))
    assert not lune_contains((0.0,), (2.0,), (3.0,))


def test_lune_boundary_does_not_block():
    # d(x3, x1) == d(x1, x2) exactly
    assert not lune_contains((0.0, 0.0), (2.0, 0.0), (0.0, 2.0))
    assert not lune_contains((0.0,), (2.0,), (-2.0,))


def test_glune_examples():
    assert glune_contains_d(5, 6, 10, 1, 1)
    assert not glune_contains_d(5, 6, 10, 2, 2)
    with pytest.raises(ValueError):
        glune_contains((0.0,), (1.0,), -1, (2.0,), 0)


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=6, max_size=6))
def test_glune_radius_zero_is_lune(v):
    a, b, c = tuple(v[0:2]), tuple(v[2:4]), tuple(v[4:6])
    assert glune_contains(c, a, 0.0, b, 0.0) == lune_contains(a, b, c)


@given(st.floats(0, 5), st.floats(0, 5), st.floats(0, 20))
def test_glune_infeasible_when_radii_large(dki, dkj, dij):
    # with 3r >= dij/2 the two thresholds cannot both hold given dki + dkj >= dij
    r = dij / 6 + 1e-9
    if dki + dkj >= dij:
        assert not glune_contains_d(dki, dkj, dij, r, r)


# --- RNG ------------------------------------------------------------------


def test_rng_hand_cases():
    assert brute_rng([(0.0,), (1.0,), (2.0,)]).sorted_edges() == [(0, 1), (1, 2)]
    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    assert brute_rng(square).sorted_edges() == [(0, 1), (0, 3), (1, 2), (2, 3)]
    assert brute_rng([(0.0, 0.0)]).edges == frozenset()
    assert brute_rng([]).n == 0


def test_rng_matches_triple_loop(rng):
    for _ in range(3):
        pts = [tuple(p) for p in rng.uniform(-1, 1, (50, 2))]
        assert set(brute_rng(pts).edges) == triple_loop_rng(pts)


@given(distinct_points)
def test_rng_property_triple_loop_and_connectivity(pts):
    g = brute_rng(pts)
    assert set(g.edges) == triple_loop_rng(pts)
    assert g.is_connected()


def test_rng_rejects_duplicates_and_cap():
    with pytest.raises(RejectedInputError):
        brute_rng([(0.0,), (0.0,)])
    with pytest.raises(OracleCapExceeded):
        brute_rng([(float(i),) for i in range(10)], cap=5)


# --- GRNG -----------------------------------------------------------------


def test_grng_zero_radius_is_rng(rng):
    pts = [tuple(p) for p in rng.uniform(-1, 1, (120, 3))]
    assert brute_grng([(p, 0.0) for p in pts]) == brute_rng(pts)


def test_grng_nested_in_radius_and_complete_above_sixth(rng):
    pts = [tuple(p) for p in rng.uniform(-1, 1, (150, 2))]
    prev = None
    for r in (0.0, 0.01, 0.02, 0.04, 0.1):
        g = brute_grng([(p, r) for p in pts])
        assert g.is_connected()
        if prev is not None:
            assert prev.issubset(g)
        prev = g
    dmax = max(math.dist(a, b) for a, b in itertools.combinations(pts, 2))
    g = brute_grng([(p, dmax / 6 * (1 + 1e-9)) for p in pts])
    assert len(g) == len(pts) * (len(pts) - 1) // 2


def test_grng_rejects_negative_radius():
    with pytest.raises(ValueError):
        brute_grng([((0.0,), -0.1), ((1.0,), 0.0)])


# --- GG, MST, kNN -----------------------------------------------------------


def test_gg_hand_cases():
    assert brute_gg([(0.0,), (1.0,), (2.0,)]).sorted_edges() == [(0, 1), (1, 2)]
    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    # opposite corners sit exactly on the diameter sphere, which does not block
    assert len(brute_gg(square)) == 6


def test_mst_hand_case_and_tie_break():
    assert brute_mst([(0.0,), (1.0,), (2.0,)]).sorted_edges() == [(0, 1), (1, 2)]
    square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]
    assert brute_mst(square).sorted_edges() == [(0, 1), (0, 3), (1, 2)]


def test_chain_on_random_sets(rng):
    for seed in range(20):
        pts = [tuple(p) for p in np.random.default_rng(seed).uniform(-1, 1, (100, 2))]
        one_nn = knn_graph(brute_knn(pts, 1))
        mst, rng_g, gg = brute_mst(pts), brute_rng(pts), brute_gg(pts)
        assert one_nn.issubset(mst) and mst.issubset(rng_g) and rng_g.issubset(gg)
        assert len(mst) == len(pts) - 1 and mst.is_connected()


def test_knn_rules():
    pts = [(0.0,), (1.0,), (2.0,), (4.0,)]
    assert brute_knn(pts, 1) == [[1], [0], [1], [2]]  # point 1 ties between 0 and 2 -> smaller id
    assert brute_knn(pts, 2)[1] == [0, 2]
    with pytest.raises(RejectedInputError):
        brute_knn(pts, 4)
    with pytest.raises(RejectedInputError):
        brute_knn(pts, 0)


# --- query oracle ------------------------------------------------------------


def test_query_oracle_matches_augmented_rng(rng):
    pts = [tuple(p) for p in rng.uniform(-1, 1, (80, 2))]
    for q in rng.uniform(-1, 1, (10, 2)):
        aug = brute_rng(pts + [tuple(q)])
        want = {u if v == len(pts) else v for u, v in aug.edges if len(pts) in (u, v)}
        assert rng_neighbors_of_query(pts, q) == want
    with pytest.raises(RejectedInputError):
        rng_neighbors_of_query(pts, pts[3])


# --- graph container ------------------------------------------------------------


def test_graph_container_and_exports():
    g = UndirectedGraph.from_pairs(4, [(2, 1), (0, 1), (1, 2)])
    assert g.sorted_edges() == [(0, 1), (1, 2)]
    assert g.adjacency() == [[1], [0, 2], [1], []]
    assert not g.is_connected()
    assert g.to_edge_list() == "0 1\n1 2\n"
    assert UndirectedGraph.from_edge_list(4, g.to_edge_list()) == g
    doc = json.loads(g.to_json())
    assert doc["degree_histogram"] == {"0": 1, "1": 2, "2": 1}
    extra, missing = g.diff(UndirectedGraph.from_pairs(4, [(0, 1), (2, 3)]))
    assert extra == {(1, 2)} and missing == {(2, 3)}
    with pytest.raises(ValueError):
        UndirectedGraph.from_pairs(3, [(1, 1)])
    with pytest.raises(ValueError):
        UndirectedGraph.from_pairs(3, [(0, 3)])
