#!/usr/bin/env python3

import itertools

import networkx as nx
import numpy as np
import pytest

from hand.layout.ged import (
    MODE_APPROX, MODE_EXACT, _Graph, graph_edit_distance, mapping_cost,
)
from hand.layout.graph import (
    DocumentGraph, random_document_graph, tokens_to_graph,
)
from hand.tokens import TokenSequence


def parse(text):
    return tokens_to_graph(TokenSequence.from_text(text))


def brute_force(graph1, graph2):
    """Minimum mapping cost over every partial injective node mapping."""
    g1, g2 = _Graph(graph1), _Graph(graph2)
    choices = list(range(len(g2))) + [None]
    best = None
    for mapping in itertools.product(choices, repeat=len(g1)):
        used = [j for j in mapping if j is not None]
        if len(used) != len(set(used)):
            continue
        cost = mapping_cost(g1, g2, mapping)
        best = cost if best is None else min(best, cost)
    return best


def networkx_ged(graph1, graph2):
    return nx.graph_edit_distance(
        graph1.g, graph2.g,
        node_subst_cost=lambda a, b: int(a["kind"] != b["kind"]),
        edge_subst_cost=lambda a, b: 0 if a["type"] == b["type"] else 2,
    )


def random_pairs(seed, count, max_nodes):
    rng = np.random.default_rng(seed)
    return [
        (random_document_graph(rng, max_nodes),
         random_document_graph(rng, max_nodes))
        for _ in range(count)
    ]


def test_identical_graphs():
    g = parse("<D><P><N>1</N><S><A>a</A><B>b</B></S></P></D>")
    assert graph_edit_distance(g, g) == (0, MODE_EXACT)


def test_text_is_ignored():
    a = parse("<D><P><N>1</N></P></D>")
    b = parse("<D><P><N>42</N></P></D>")
    assert graph_edit_distance(a, b).distance == 0


def test_extra_leaf_costs_node_and_edge():
    a = parse("<D><P><S></S></P></D>")
    b = parse("<D><P><S><B>x</B></S></P></D>")
    assert graph_edit_distance(a, b).distance == 2
    assert graph_edit_distance(b, a).distance == 2


def test_extra_sibling_costs_order_edge_too():
    a = parse("<D><P><S><B>x</B></S></P></D>")
    b = parse("<D><P><S><A>y</A><B>x</B></S></P></D>")
    assert graph_edit_distance(a, b).distance == 3


def test_kind_substitution():
    a = parse("<D><P><S><A>x</A></S></P></D>")
    b = parse("<D><P><S><B>x</B></S></P></D>")
    assert graph_edit_distance(a, b).distance == 1


@pytest.mark.parametrize("seed", range(4))
def test_exact_matches_brute_force(seed):
    for a, b in random_pairs(seed, 6, 5):
        assert graph_edit_distance(a, b).distance == brute_force(a, b)


@pytest.mark.parametrize("seed", range(2))
def test_exact_matches_networkx(seed):
    for a, b in random_pairs(100 + seed, 4, 5):
        expected = networkx_ged(a, b)
        assert graph_edit_distance(a, b).distance == int(expected)


def test_symmetric():
    for a, b in random_pairs(7, 6, 6):
        assert graph_edit_distance(a, b).distance == \
            graph_edit_distance(b, a).distance


def test_triangle_inequality():
    rng = np.random.default_rng(12)
    for _ in range(30):
        a, b, c = (random_document_graph(rng, 5) for _ in range(3))
        ab = graph_edit_distance(a, b).distance
        bc = graph_edit_distance(b, c).distance
        ac = graph_edit_distance(a, c).distance
        assert ac <= ab + bc


def test_approx_is_upper_bound():
    for a, b in random_pairs(8, 6, 6):
        exact = graph_edit_distance(a, b)
        approx = graph_edit_distance(a, b, exact_limit=0)
        assert approx.mode == MODE_APPROX
        assert approx.distance >= exact.distance
        assert int(approx) == approx.distance


def test_large_graphs_use_approximation():
    rng = np.random.default_rng(9)
    a = random_document_graph(rng, max_nodes=30)
    while a.num_nodes <= 10:
        a = random_document_graph(rng, max_nodes=30)
    result = graph_edit_distance(a, DocumentGraph.empty())
    assert result.mode == MODE_APPROX
    assert result.distance >= a.num_nodes - 1 + a.num_edges
