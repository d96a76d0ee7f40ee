#!/usr/bin/env python3
"""
Hierarchical document graph and the layout-tag grammar.

Node kinds::

    D  document (root)     P  page
    S  section             N  page number
    A  annotation          B  body

P is a child of D; N and S are children of P; A and B are children of S.
N, A and B are leaves carrying text. Hierarchy edges run parent -> child,
reading-order edges run from each child to its next sibling.

The graph is stored as a `networkx.DiGraph`; every edge has a ``type``
attribute, either ``"hierarchy"`` or ``"order"``.

>>> g = tokens_to_graph(TokenSequence.from_text(
...     "<D><P><N>1</N><S><B>abc</B></S></P></D>"))
>>> g.num_nodes, [g.kind(n) for n in g.preorder()]
(5, ['D', 'P', 'N', 'S', 'B'])
>>> graph_to_tokens(g).to_text()
'<D><P><N>1</N><S><B>abc</B></S></P></D>'
"""
import logging

import networkx as nx

from ..lib.errors import ContractError, LayoutParseError
from ..tokens import SPECIALS, TokenSequence, is_tag

log = logging.getLogger(__name__)

HIERARCHY = "hierarchy"
ORDER = "order"

ROOT_KIND = "D"
LEAF_KINDS = frozenset("NAB")
CHILD_KINDS = {
    "D": frozenset("P"),
    "P": frozenset("NS"),
    "S": frozenset("AB"),
    "N": frozenset(),
    "A": frozenset(),
    "B": frozenset(),
}


def open_tag(kind):
    return "<{}>".format(kind)


def close_tag(kind):
    return "</{}>".format(kind)


def tag_kind(token):
    """(kind, is_close) for a layout tag token."""
    if token.startswith("</"):
        return token[2], True
    return token[1], False


class DocumentGraph:
    """Tree of layout nodes with sibling reading order."""

    def __init__(self):
        self.g = nx.DiGraph()
        self.repairs = []
        self._next_id = 0

    @classmethod
    def empty(cls):
        g = cls()
        g.add_node(ROOT_KIND)
        return g

    # Construction -----------------------------------------------------------

    def add_node(self, kind, parent=None, text=""):
        """Append a node as the last child of parent; returns its id."""
        if kind not in CHILD_KINDS:
            raise ContractError("unknown node kind {!r}".format(kind))
        if parent is None:
            if kind != ROOT_KIND or self.g.number_of_nodes():
                raise ContractError(
                    "only one root of kind {} is allowed".format(ROOT_KIND)
                )
        elif kind not in CHILD_KINDS[self.kind(parent)]:
            raise ContractError(
                "{} cannot be a child of {}".format(kind, self.kind(parent))
            )
        if text and kind not in LEAF_KINDS:
            raise ContractError("{} nodes carry no text".format(kind))
        node = self._next_id
        self._next_id += 1
        self.g.add_node(node, kind=kind, text=text)
        if parent is not None:
            siblings = self.children(parent)
            self.g.add_edge(parent, node, type=HIERARCHY)
            if siblings:
                self.g.add_edge(siblings[-1], node, type=ORDER)
        return node

    def append_text(self, node, text):
        if self.kind(node) not in LEAF_KINDS:
            raise ContractError(
                "{} nodes carry no text".format(self.kind(node))
            )
        self.g.nodes[node]["text"] += text

    # Queries ----------------------------------------------------------------

    @property
    def num_nodes(self):
        return self.g.number_of_nodes()

    @property
    def num_edges(self):
        return self.g.number_of_edges()

    @property
    def root(self):
        for n, kind in self.g.nodes(data="kind"):
            if kind == ROOT_KIND and not self.parents(n):
                return n
        return None

    def kind(self, node):
        return self.g.nodes[node]["kind"]

    def text(self, node):
        return self.g.nodes[node]["text"]

    def parents(self, node):
        return [
            p for p in self.g.predecessors(node)
            if self.g.edges[p, node]["type"] == HIERARCHY
        ]

    def edges(self, edge_type=None):
        return [
            (u, v) for u, v, t in self.g.edges(data="type")
            if edge_type is None or t == edge_type
        ]

    def children(self, node):
        """Children of node in reading order."""
        kids = [
            c for c in self.g.successors(node)
            if self.g.edges[node, c]["type"] == HIERARCHY
        ]
        if len(kids) < 2:
            return kids
        kid_set = set(kids)
        has_prev = {
            v for u, v in self.edges(ORDER) if u in kid_set and v in kid_set
        }
        first = [c for c in kids if c not in has_prev]
        if len(first) != 1:
            raise ContractError(
                "children of {} have no single reading-order start".format(
                    node
                )
            )
        ordered = first
        while len(ordered) < len(kids):
            nxt = [
                v for v in self.g.successors(ordered[-1])
                if self.g.edges[ordered[-1], v]["type"] == ORDER
            ]
            if len(nxt) != 1:
                raise ContractError(
                    "reading order of {} is broken".format(node)
                )
            ordered.append(nxt[0])
        return ordered

    def preorder(self, node=None):
        if node is None:
            node = self.root
            if node is None:
                return
        yield node
        for c in self.children(node):
            yield from self.preorder(c)

    def leaves(self):
        return [n for n in self.preorder() if self.kind(n) in LEAF_KINDS]

    def canonical(self, node=None):
        """Nested (kind, text, children) tuple; equal iff same document."""
        if node is None:
            node = self.root
        return (
            self.kind(node), self.text(node),
            tuple(self.canonical(c) for c in self.children(node)),
        )

    def validate(self):
        """Raise ContractError unless the graph is a valid document."""
        roots = [n for n in self.g if not self.parents(n)]
        if len(roots) != 1 or self.kind(roots[0]) != ROOT_KIND:
            raise ContractError("document needs exactly one D root")
        for n in self.g:
            parents = self.parents(n)
            if len(parents) > 1:
                raise ContractError("node {} has several parents".format(n))
            if parents and self.kind(n) not in CHILD_KINDS[
                    self.kind(parents[0])]:
                raise ContractError(
                    "{} under {}".format(self.kind(n), self.kind(parents[0]))
                )
            if self.text(n) and self.kind(n) not in LEAF_KINDS:
                raise ContractError("text on {} node".format(self.kind(n)))
        for u, v in self.edges(ORDER):
            if self.parents(u) != self.parents(v):
                raise ContractError(
                    "reading order joins non-siblings {} and {}".format(u, v)
                )
        if len(list(self.preorder())) != self.num_nodes:
            raise ContractError("hierarchy is not a tree")
        return self

    def __eq__(self, other):
        if not isinstance(other, DocumentGraph):
            return NotImplemented
        return self.canonical() == other.canonical()

    def __repr__(self):
        return "DocumentGraph({} nodes, {} edges)".format(
            self.num_nodes, self.num_edges
        )


def graph_to_tokens(graph):
    """Tag grammar serialization in reading order."""
    tokens = []

    def emit(node):
        kind = graph.kind(node)
        tokens.append(open_tag(kind))
        tokens.extend(graph.text(node))
        for c in graph.children(node):
            emit(c)
        tokens.append(close_tag(kind))

    if graph.root is not None:
        emit(graph.root)
    return TokenSequence(tokens)


class _Parser:

    def __init__(self, strict):
        self.strict = strict
        self.graph = DocumentGraph()
        self.stack = []
        self.closed = False

    def fail(self, position, msg):
        if self.strict:
            raise LayoutParseError(position, msg)
        self.graph.repairs.append("token {}: {}".format(position, msg))

    def top_kind(self):
        return self.graph.kind(self.stack[-1][0]) if self.stack else None

    def auto_close(self, depth, position):
        while len(self.stack) > depth:
            node, _ = self.stack.pop()
            self.graph.repairs.append("token {}: auto-closed {}".format(
                position, open_tag(self.graph.kind(node))
            ))
        if not self.stack:
            self.closed = True

    def open(self, kind, position):
        if not self.stack:
            if self.closed:
                self.fail(position, "{} after the document end".format(
                    open_tag(kind)
                ))
                return
            if kind != ROOT_KIND:
                self.fail(position, "expected {}, got {}; inserted it".format(
                    open_tag(ROOT_KIND), open_tag(kind)
                ))
                self.stack.append((self.graph.add_node(ROOT_KIND), position))
            else:
                self.stack.append((self.graph.add_node(kind), position))
                return
        if kind == ROOT_KIND:
            self.fail(position, "nested {}".format(open_tag(kind)))
            return
        if kind not in CHILD_KINDS[self.top_kind()]:
            if self.strict:
                raise LayoutParseError(position, "{} inside {}".format(
                    open_tag(kind), open_tag(self.top_kind())
                ))
            for depth in range(len(self.stack) - 1, 0, -1):
                node, _ = self.stack[depth - 1]
                if kind in CHILD_KINDS[self.graph.kind(node)]:
                    self.auto_close(depth, position)
                    break
            else:
                self.fail(position, "dropped misplaced {}".format(
                    open_tag(kind)
                ))
                return
        parent = self.stack[-1][0]
        self.stack.append((self.graph.add_node(kind, parent), position))

    def close(self, kind, position):
        kinds = [self.graph.kind(n) for n, _ in self.stack]
        if kind not in kinds:
            self.fail(position, "stray {}".format(close_tag(kind)))
            return
        if kinds[-1] != kind:
            top, opened = self.stack[-1]
            if self.strict:
                raise LayoutParseError(opened, "unclosed {}".format(
                    open_tag(self.graph.kind(top))
                ))
            depth = len(kinds) - 1 - kinds[::-1].index(kind)
            self.auto_close(depth + 1, position)
        self.stack.pop()
        if not self.stack:
            self.closed = True

    def text(self, token, position):
        if not self.stack or self.top_kind() not in LEAF_KINDS:
            self.fail(position, "dropped text {!r} outside a leaf".format(
                token
            ))
            return
        self.graph.append_text(self.stack[-1][0], token)

    def finish(self, position):
        if self.stack:
            top, opened = self.stack[-1]
            if self.strict:
                raise LayoutParseError(opened, "unclosed {}".format(
                    open_tag(self.graph.kind(top))
                ))
            self.auto_close(0, position)
        if not self.graph.num_nodes:
            self.fail(position, "empty document")
            self.graph.add_node(ROOT_KIND)
        return self.graph


def tokens_to_graph(seq, strict=True):
    """Parse the tag grammar into a DocumentGraph.

    Specials are skipped. Strict mode raises LayoutParseError at the first
    violation; lenient mode repairs it and lists the repairs in
    ``graph.repairs``.
    """
    parser = _Parser(strict)
    tokens = list(seq)
    for position, token in enumerate(tokens):
        if token in SPECIALS:
            continue
        if is_tag(token):
            kind, closing = tag_kind(token)
            if closing:
                parser.close(kind, position)
            else:
                parser.open(kind, position)
        else:
            parser.text(token, position)
    graph = parser.finish(len(tokens))
    for repair in graph.repairs:
        log.debug("layout repair: %s", repair)
    return graph


def random_document_graph(rng, max_nodes=10, alphabet="abc"):
    """Random valid document with at most max_nodes nodes (>= 1)."""
    if max_nodes < 1:
        raise ContractError("max_nodes must be >= 1")
    g = DocumentGraph.empty()
    open_nodes = [g.root]
    while g.num_nodes < max_nodes and open_nodes:
        parent = open_nodes[int(rng.integers(0, len(open_nodes)))]
        if rng.random() < 0.2:
            open_nodes.remove(parent)
            continue
        kinds = sorted(CHILD_KINDS[g.kind(parent)])
        kind = kinds[int(rng.integers(0, len(kinds)))]
        text = ""
        if kind in LEAF_KINDS:
            n = int(rng.integers(0, 4))
            text = "".join(
                alphabet[int(rng.integers(0, len(alphabet)))]
                for _ in range(n)
            )
        node = g.add_node(kind, parent, text)
        if kind not in LEAF_KINDS:
            open_nodes.append(node)
    return g


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
