#!/usr/bin/env python3
"""
Canonical XML form of a document graph.

Elements are named after node kinds. Leaves hold their text; inner
elements hold only children. Within a page the number comes before the
sections, within a section the annotation before the body; otherwise
children keep their reading order. Output is UTF-8 text indented by two
spaces without an XML declaration.

>>> print(graph_to_xml(DocumentGraph.empty()), end="")
<D/>
>>> g = xml_to_graph("<D><P><S><B>ab</B></S><N>7</N></P></D>")
>>> print(graph_to_xml(g), end="")
<D>
  <P>
    <N>7</N>
    <S>
      <B>ab</B>
    </S>
  </P>
</D>
"""
import lxml.etree as ET

from ..lib.errors import ContractError, SchemaError
from .graph import CHILD_KINDS, LEAF_KINDS, ROOT_KIND, DocumentGraph

# Serialization rank of each kind among its siblings.
KIND_RANK = {"N": 0, "S": 1, "A": 0, "B": 1, "P": 0, "D": 0}


def canonical_children(graph, node):
    """Children in canonical element order (stable on reading order)."""
    return sorted(graph.children(node), key=lambda c: KIND_RANK[graph.kind(c)])


def graph_to_element(graph, node=None):
    if node is None:
        node = graph.root
    el = ET.Element(graph.kind(node))
    if graph.kind(node) in LEAF_KINDS and graph.text(node):
        el.text = graph.text(node)
    for c in canonical_children(graph, node):
        el.append(graph_to_element(graph, c))
    return el


def graph_to_xml(graph):
    return ET.tostring(
        graph_to_element(graph), pretty_print=True, encoding="utf-8",
    ).decode("utf-8")


def _blank(text):
    return text is None or not text.strip()


def element_to_graph(root):
    if not isinstance(root.tag, str):
        raise SchemaError("unexpected XML node {!r}".format(root))
    if root.tag != ROOT_KIND:
        raise SchemaError(
            "root element must be <{}>, got <{}>".format(ROOT_KIND, root.tag)
        )
    graph = DocumentGraph()

    def visit(el, parent):
        if el.tag not in CHILD_KINDS:
            raise SchemaError("unknown element <{}>".format(el.tag))
        if el.attrib:
            raise SchemaError(
                "<{}> takes no attributes, got {}".format(
                    el.tag, sorted(el.attrib)
                )
            )
        text = el.text or ""
        if el.tag not in LEAF_KINDS:
            if not _blank(text):
                raise SchemaError("<{}> cannot hold text".format(el.tag))
            text = ""
        try:
            node = graph.add_node(el.tag, parent, text)
        except ContractError as e:
            raise SchemaError(str(e))
        for child in el:
            if not isinstance(child.tag, str):
                continue
            if el.tag in LEAF_KINDS:
                raise SchemaError("<{}> cannot hold elements".format(el.tag))
            if not _blank(child.tail):
                raise SchemaError("text after <{}>".format(child.tag))
            visit(child, node)

    visit(root, None)
    return graph


def xml_to_graph(text):
    """Parse canonical (or any equivalent) XML into a DocumentGraph."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    try:
        root = ET.fromstring(text)
    except ET.XMLSyntaxError as e:
        raise SchemaError("malformed XML: {}".format(e))
    return element_to_graph(root)


def canonicalize_xml(text):
    """Re-serialize XML text in canonical form."""
    return graph_to_xml(xml_to_graph(text))


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
