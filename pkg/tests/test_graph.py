import io
import math

import pytest
from hypothesis import given, settings

from conftest import K3, K4, P3, S4, fixture_graph, graphs
from docd.graph import (Graph, GraphError, GraphParseError, UnknownVertexError, components,
                        diameter, links_among, load_edge_list, max_component_diameter,
                        neighbors, parse_edge_list, serialize)


def test_triangle_from_text():
    g = load_edge_list(io.StringIO("1 2\n2 3\n3 1\n"))
    assert (g.n, g.m) == (3, 3)


def test_relabel_collapses_duplicates():
    g = load_edge_list(io.StringIO("a b\nb a\n# comment\n"), relabel=True)
    assert (g.n, g.m) == (2, 1)
    assert g.label_map == {"a": 0, "b": 1}


def test_comma_and_whitespace_delimiters():
    g = parse_edge_list("1,2\n2 ,3\n3\t\t4\n  # only a comment\n4 1 # trailing\n")
    assert g.edges() == [(1, 2), (1, 4), (2, 3), (3, 4)]


def test_wrong_token_count_reports_line():
    with pytest.raises(GraphParseError) as err:
        parse_edge_list("1 2\n\n2 3 4\n")
    assert err.value.lineno == 3
    assert "line 3" in str(err.value)


def test_self_loop_rejected_unless_skipped():
    with pytest.raises(GraphParseError, match="self-loop"):
        parse_edge_list("1 1\n1 2\n")
    g = parse_edge_list("1 1\n1 2\n", skip_self_loops=True)
    assert g.edges() == [(1, 2)]


def test_string_labels_need_relabel():
    with pytest.raises(GraphParseError, match="relabel"):
        parse_edge_list("a b\n")


def test_from_edges_rejects_self_loop():
    with pytest.raises(GraphError):
        Graph.from_edges([(1, 1)])


def test_karate_counts():
    # 78 distinct ties among 34 members, hub 1 has 16 of them
    g = fixture_graph("karate")
    assert (g.n, g.m) == (34, 78)
    assert len(neighbors(g, 1)) == 16
    assert diameter(g) == 5


def test_football_counts():
    g = fixture_graph("football")
    assert (g.n, g.m) == (115, 613)
    assert diameter(g) == 4


def test_neighbors():
    assert neighbors(K3, 1) == (2, 3)
    assert neighbors(P3, 2) == (1, 3)
    with pytest.raises(UnknownVertexError):
        neighbors(K3, 9)


def test_links_among():
    assert links_among(K3, {1, 2, 3}) == 3
    assert links_among(S4, neighbors(S4, 0)) == 0
    assert links_among(K4, neighbors(K4, 1)) == 3
    assert links_among(K3, set()) == 0


def test_diameter_small():
    assert diameter(K3) == 1
    assert diameter(Graph.from_edges([(0, 1), (1, 2), (2, 3)])) == 3
    assert diameter(Graph.from_edges([], [0])) == 0


def test_disconnected_diameter_is_infinite():
    g = Graph.from_edges([(0, 1), (2, 3), (3, 4)])
    assert diameter(g) == math.inf
    assert max_component_diameter(g) == 2
    assert components(g) == [[0, 1], [2, 3, 4]]


def test_serialize_is_sorted_and_ascending():
    g = parse_edge_list("3 1\n2 1\n3 2\n")
    assert serialize(g) == "1 2\n1 3\n2 3\n"


@settings(max_examples=150, deadline=None)
@given(graphs(min_n=1, max_n=16))
def test_roundtrip_and_counts(g):
    if g.m:
        h = load_edge_list(io.StringIO(serialize(g)))
        again = load_edge_list(io.StringIO(serialize(h)))
        assert (h.vertices, h.adjacency) == (again.vertices, again.adjacency)
        assert h.adjacency == {v: ns for v, ns in g.adjacency.items() if ns}
    assert sum(len(ns) for ns in g.adjacency.values()) == 2 * g.m
    assert links_among(g, g.vertices) == g.m
    for v, ns in g.adjacency.items():
        assert v not in ns
        assert all(v in g.adjacency[u] for u in ns)
    if g.m:
        assert diameter(g) >= 1
