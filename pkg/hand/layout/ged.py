#!/usr/bin/env python3
"""
Graph edit distance between document graphs.

Unit costs: inserting or deleting a node or an edge costs 1, substituting
a node costs 1 when the kinds differ and 0 otherwise. Edges are typed
(hierarchy or reading order); an edge survives a node mapping only if
its image has the same type. Text payloads are ignored.

Graphs of up to `EXACT_LIMIT` nodes are solved exactly by best-first
search over partial node assignments. Larger pairs get the cost of the
assignment found by `scipy.optimize.linear_sum_assignment`, an upper
bound.
"""
import heapq
import itertools
from collections import Counter, namedtuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..lib.asserts import assert_eq

EXACT_LIMIT = 10

MODE_EXACT = "exact"
MODE_APPROX = "approx"


class GedResult(namedtuple("GedResult", "distance mode")):

    def __int__(self):
        return int(self.distance)


class _Graph:
    """Kinds and typed edges of a DocumentGraph, indexed 0..n-1."""

    def __init__(self, graph):
        order = list(graph.preorder())
        index = {n: i for i, n in enumerate(order)}
        self.kinds = [graph.kind(n) for n in order]
        self.edges = {}
        for u, v, t in graph.g.edges(data="type"):
            self.edges[index[u], index[v]] = t
        self.adjacent = [set() for _ in order]
        for u, v in self.edges:
            self.adjacent[u].add(v)
            self.adjacent[v].add(u)

    def __len__(self):
        return len(self.kinds)

    def edges_between(self, a, b):
        """Typed edges joining a and b in either direction (or a loop)."""
        out = []
        for key in ((a, b), (b, a)) if a != b else ((a, a),):
            if key in self.edges:
                out.append((key, self.edges[key]))
        return out


def mapping_cost(g1, g2, mapping):
    """Edit cost of a node mapping.

    mapping[i] is the g2 node matched to g1 node i, or None for deletion;
    g2 nodes not in the mapping are inserted.
    """
    assert_eq(len(mapping), len(g1), "mapping must cover every node of g1")
    image = {i: j for i, j in enumerate(mapping) if j is not None}
    used = set(image.values())
    cost = sum(1 for j in mapping if j is None)
    cost += len(g2) - len(used)
    cost += sum(1 for i, j in image.items() if g1.kinds[i] != g2.kinds[j])
    kept = 0
    for (u, v), t in g1.edges.items():
        if u in image and v in image and \
                g2.edges.get((image[u], image[v])) == t:
            kept += 1
    return cost + len(g1.edges) + len(g2.edges) - 2 * kept


def _node_bound(kinds1, kinds2):
    common = sum((Counter(kinds1) & Counter(kinds2)).values())
    return max(len(kinds1), len(kinds2)) - common


def _step_cost(g1, g2, assigned, i, j):
    """Cost added by mapping g1 node i to j (None deletes) given assigned."""
    cost = 1 if j is None else int(g1.kinds[i] != g2.kinds[j])
    inverse = {b: a for a, b in assigned.items() if b is not None}
    for k in list(g1.adjacent[i] & set(assigned)) + [i]:
        for (u, v), t in g1.edges_between(i, k):
            mu = j if u == i else assigned.get(u)
            mv = j if v == i else assigned.get(v)
            if mu is None or mv is None or g2.edges.get((mu, mv)) != t:
                cost += 1
    if j is not None:
        for m in list(g2.adjacent[j] & set(inverse)) + [j]:
            for (u, v), t in g2.edges_between(j, m):
                pu = i if u == j else inverse.get(u)
                pv = i if v == j else inverse.get(v)
                if pu is None or pv is None or g1.edges.get((pu, pv)) != t:
                    cost += 1
    return cost


def _completion_cost(g2, used):
    """Insert every unused g2 node and the edges touching one."""
    free = set(range(len(g2))) - used
    edges = sum(1 for u, v in g2.edges if u in free or v in free)
    return len(free) + edges


def _remaining_edges(g, done):
    return sum(1 for u, v in g.edges if u not in done or v not in done)


def exact_ged(g1, g2):
    """Best-first search; returns (distance, mapping)."""
    n1 = len(g1)
    tie = itertools.count()
    start = (_node_bound(g1.kinds, g2.kinds)
             + abs(len(g1.edges) - len(g2.edges)))
    heap = [(start, 0, next(tie), ())]
    while heap:
        _, g, _, mapping = heapq.heappop(heap)
        depth = len(mapping)
        if depth == n1 + 1:
            return g, list(mapping[:-1])
        used = {j for j in mapping if j is not None}
        if depth == n1:
            total = g + _completion_cost(g2, used)
            heapq.heappush(heap, (total, total, next(tie), mapping + (None,)))
            continue
        assigned = dict(enumerate(mapping))
        for j in [c for c in range(len(g2)) if c not in used] + [None]:
            step = _step_cost(g1, g2, assigned, depth, j)
            cost = g + step
            used_next = used | ({j} if j is not None else set())
            done1 = set(range(depth + 1))
            rest1 = [g1.kinds[i] for i in range(depth + 1, n1)]
            rest2 = [g2.kinds[c] for c in range(len(g2)) if c not in used_next]
            bound = _node_bound(rest1, rest2) + abs(
                _remaining_edges(g1, done1) - _remaining_edges(g2, used_next)
            )
            heapq.heappush(
                heap, (cost + bound, cost, next(tie), mapping + (j,))
            )
    raise AssertionError("search space exhausted")


def assignment_ged(g1, g2):
    """Upper bound from a bipartite node assignment; (distance, mapping)."""
    n1, n2 = len(g1), len(g2)
    big = float(n1 + n2 + len(g1.edges) + len(g2.edges) + 1)
    size = n1 + n2
    cost = np.full((size, size), big)
    for i in range(n1):
        d1 = len(g1.adjacent[i])
        for j in range(n2):
            d2 = len(g2.adjacent[j])
            cost[i, j] = int(g1.kinds[i] != g2.kinds[j]) + abs(d1 - d2) / 2.0
        cost[i, n2 + i] = 1 + d1 / 2.0
    for j in range(n2):
        cost[n1 + j, j] = 1 + len(g2.adjacent[j]) / 2.0
    cost[n1:, n2:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    mapping = [None] * n1
    for r, c in zip(rows, cols):
        if r < n1 and c < n2:
            mapping[r] = int(c)
    return mapping_cost(g1, g2, mapping), mapping


def graph_edit_distance(graph1, graph2, exact_limit=EXACT_LIMIT):
    """GedResult(distance, mode) between two DocumentGraphs.

    >>> from hand.layout.graph import DocumentGraph
    >>> a = DocumentGraph.empty()
    >>> b = DocumentGraph.empty()
    >>> _ = b.add_node("P", b.root)
    >>> graph_edit_distance(a, b)
    GedResult(distance=2, mode='exact')
    """
    g1, g2 = _Graph(graph1), _Graph(graph2)
    if len(g1) <= exact_limit and len(g2) <= exact_limit:
        distance, _ = exact_ged(g1, g2)
        return GedResult(int(distance), MODE_EXACT)
    distance, _ = assignment_ged(g1, g2)
    return GedResult(int(distance), MODE_APPROX)


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
