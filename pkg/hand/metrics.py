#!/usr/bin/env python3
"""
Recognition and layout metrics.

Every rate is micro-averaged: summed edit distances over summed
reference lengths, never a mean of per-sample rates. `MetricReport`
keeps the raw sums so that reports computed on separate shards merge
exactly.

Text metrics run on the plain text of a token sequence: layout tags are
removed, leaves are separated by a line break and pages by a blank line.
"""
import json
import logging
import re

import numpy as np

from .layout.ged import graph_edit_distance
from .layout.graph import HIERARCHY, LEAF_KINDS, tokens_to_graph
from .lib.errors import ContractError, UndefinedRateError
from .tokens import SPECIALS, TokenSequence, is_tag

log = logging.getLogger(__name__)

TEXT_LEVELS = ("char", "word", "sentence", "paragraph")
REPORT_NAMES = {"char": "cer", "word": "wer", "sentence": "ser",
                "paragraph": "per"}
CER_THRESHOLDS = tuple(round(0.05 * k, 2) for k in range(1, 11))
PAGE_JOIN = "\n\n"


def levenshtein(a, b):
    """Minimum number of insertions, deletions and substitutions.

    >>> levenshtein("kitten", "sitting")
    3
    >>> levenshtein("", "abc")
    3
    """
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (x != y),
            ))
        prev = cur
    return prev[-1]


def plain_text(seq):
    """Text of a TokenSequence (or tagged string) without layout tags.

    >>> plain_text("<D><P><N>1</N><S><B>ab</B></S></P></D>")
    '1\\nab'
    """
    if isinstance(seq, str):
        seq = TokenSequence.from_text(seq)
    out = []
    pending = ""
    for token in seq:
        if token in SPECIALS:
            continue
        if is_tag(token):
            if token == "</P>":
                pending = PAGE_JOIN
            elif token[2:3] in LEAF_KINDS and token.startswith("</"):
                pending = pending or "\n"
            continue
        if pending and out:
            out.append(pending)
        pending = ""
        out.append(token)
    return "".join(out)


def units(text, level):
    """Split text into the symbols compared at level."""
    if level not in TEXT_LEVELS:
        raise ContractError("unknown text level {!r}".format(level))
    if not text:
        return []
    if level == "char":
        return list(text)
    if level == "word":
        return text.split()
    if level == "sentence":
        return text.split("\n")
    return re.split(r"\n[ \t]*\n", text)


def _pairs(preds, refs):
    preds, refs = list(preds), list(refs)
    if len(preds) != len(refs):
        raise ContractError(
            "{} predictions for {} references".format(len(preds), len(refs))
        )
    return [(plain_text(p), plain_text(r)) for p, r in zip(preds, refs)]


def error_counts(preds, refs, level):
    """(summed distance, summed reference length) at level."""
    dist = length = 0
    for p, r in _pairs(preds, refs):
        ref_units = units(r, level)
        dist += levenshtein(units(p, level), ref_units)
        length += len(ref_units)
    return dist, length


def _rate(dist, length, what):
    if not length:
        raise UndefinedRateError("{}: reference length is zero".format(what))
    return dist / float(length)


def error_rate(preds, refs, level="char"):
    """Micro-averaged error rate at level; may exceed 1.

    >>> error_rate(["wurde"], ["w\\u016brde"], "char")
    0.2
    """
    return _rate(*error_counts(preds, refs, level), what=level)


def page_groups(pages, n):
    """Concatenate every n consecutive pages."""
    pages = [plain_text(p) for p in pages]
    if n < 1 or len(pages) % n:
        raise ContractError(
            "{} pages do not split into groups of {}".format(len(pages), n)
        )
    return [
        PAGE_JOIN.join(pages[i:i + n]) for i in range(0, len(pages), n)
    ]


def sper_counts(preds, refs, n):
    if len(preds) != len(refs):
        raise ContractError(
            "{} predicted pages for {} reference pages".format(
                len(preds), len(refs)
            )
        )
    return error_counts(page_groups(preds, n), page_groups(refs, n), "char")


def sper_n(preds, refs, n):
    """Character error rate over groups of n consecutive pages."""
    return _rate(*sper_counts(preds, refs, n), what="sper_{}".format(n))


def graph_size(graph):
    """nn + ne of a reference graph; ne counts hierarchy edges."""
    return graph.num_nodes + len(graph.edges(HIERARCHY))


def loer_counts(pred_graphs, ref_graphs):
    if len(pred_graphs) != len(ref_graphs):
        raise ContractError("graph lists differ in length")
    ged = size = 0
    for p, r in zip(pred_graphs, ref_graphs):
        ged += int(graph_edit_distance(r, p))
        size += graph_size(r)
    return ged, size


def loer(pred_graphs, ref_graphs):
    """Summed edit distance over summed reference nodes and edges."""
    return _rate(*loer_counts(pred_graphs, ref_graphs), what="loer")


def graph_regions(graph):
    """(kind, text) of every leaf in reading order."""
    return [(graph.kind(n), graph.text(n)) for n in graph.leaves()]


def region_cer(pred, ref):
    return levenshtein(pred, ref) / float(max(1, len(ref)))


def match_regions(preds, refs):
    """Greedy one-to-one matching by ascending CER; returns the CERs."""
    pairs = sorted(
        (region_cer(p, r), i, j)
        for i, p in enumerate(preds) for j, r in enumerate(refs)
    )
    used_p, used_r, matched = set(), set(), []
    for cer, i, j in pairs:
        if i in used_p or j in used_r:
            continue
        used_p.add(i)
        used_r.add(j)
        matched.append(cer)
    return matched


def new_class_counts():
    return {"n_pred": 0, "ref_len": 0, "tp": [0] * len(CER_THRESHOLDS)}


def region_counts(pred_docs, ref_docs, counts=None):
    """Per-class prediction, true-positive and reference-length sums.

    Each document is a list of (class, text) regions; matching happens
    within a document and a class.
    """
    if len(pred_docs) != len(ref_docs):
        raise ContractError("region lists differ in length")
    counts = {} if counts is None else counts
    for preds, refs in zip(pred_docs, ref_docs):
        classes = {c for c, _ in preds} | {c for c, _ in refs}
        for c in sorted(classes):
            p = [t for k, t in preds if k == c]
            r = [t for k, t in refs if k == c]
            entry = counts.setdefault(c, new_class_counts())
            entry["n_pred"] += len(p)
            entry["ref_len"] += sum(len(t) for t in r)
            for cer in match_regions(p, r):
                for k, tau in enumerate(CER_THRESHOLDS):
                    if cer <= tau:
                        entry["tp"][k] += 1
    return counts


def map_from_counts(counts):
    total = sum(e["ref_len"] for e in counts.values())
    if not total:
        raise UndefinedRateError("map_cer: no reference text")
    score = 0.0
    for entry in counts.values():
        if not entry["ref_len"]:
            continue
        if entry["n_pred"]:
            ap = float(np.mean(
                [tp / float(entry["n_pred"]) for tp in entry["tp"]]
            ))
        else:
            ap = 0.0
        score += ap * entry["ref_len"]
    return score / total


def map_cer(pred_regions, ref_regions):
    """Length-weighted mean over classes of the CER-threshold precision.

    >>> map_cer([[("B", "abc")]], [[("B", "abc")]])
    1.0
    """
    return map_from_counts(region_counts(pred_regions, ref_regions))


def _maybe(fn, *args):
    try:
        return fn(*args)
    except UndefinedRateError as e:
        log.warning("%s", e)
        return None


class MetricReport:
    """Raw sums behind every metric, mergeable across shards."""

    def __init__(self):
        self.samples = 0
        self.text = {level: [0, 0] for level in TEXT_LEVELS}
        self.sper = {}
        self.ged = [0, 0]
        self.graphs = 0
        self.regions = {}

    def add_text(self, preds, refs):
        for level in TEXT_LEVELS:
            d, n = error_counts(preds, refs, level)
            self.text[level][0] += d
            self.text[level][1] += n
        self.samples += len(refs)
        return self

    def add_pages(self, preds, refs, n):
        d, length = sper_counts(preds, refs, n)
        entry = self.sper.setdefault(n, [0, 0])
        entry[0] += d
        entry[1] += length
        return self

    def add_graphs(self, pred_graphs, ref_graphs):
        ged, size = loer_counts(pred_graphs, ref_graphs)
        self.ged[0] += ged
        self.ged[1] += size
        self.graphs += len(ref_graphs)
        region_counts(
            [graph_regions(g) for g in pred_graphs],
            [graph_regions(g) for g in ref_graphs],
            self.regions,
        )
        return self

    def merge(self, other):
        out = MetricReport.from_dict(self.to_dict())
        out.samples += other.samples
        out.graphs += other.graphs
        for level in TEXT_LEVELS:
            out.text[level] = [
                a + b for a, b in zip(out.text[level], other.text[level])
            ]
        for n, (d, length) in other.sper.items():
            entry = out.sper.setdefault(n, [0, 0])
            entry[0] += d
            entry[1] += length
        out.ged = [a + b for a, b in zip(out.ged, other.ged)]
        for c, entry in other.regions.items():
            mine = out.regions.setdefault(c, new_class_counts())
            mine["n_pred"] += entry["n_pred"]
            mine["ref_len"] += entry["ref_len"]
            mine["tp"] = [a + b for a, b in zip(mine["tp"], entry["tp"])]
        return out

    def rate(self, level):
        return _maybe(_rate, self.text[level][0], self.text[level][1], level)

    @property
    def loer(self):
        return _maybe(_rate, self.ged[0], self.ged[1], "loer")

    @property
    def map_cer(self):
        return _maybe(map_from_counts, self.regions)

    def to_dict(self):
        out = {REPORT_NAMES[level]: self.rate(level) for level in TEXT_LEVELS}
        out["sper_n"] = {
            str(n): _maybe(_rate, d, length, "sper_{}".format(n))
            for n, (d, length) in sorted(self.sper.items())
        }
        out["loer"] = self.loer
        out["map_cer"] = self.map_cer
        out["counts"] = {
            "samples": self.samples,
            "graphs": self.graphs,
            "text": {k: list(v) for k, v in self.text.items()},
            "sper": {str(n): list(v) for n, v in sorted(self.sper.items())},
            "ged": list(self.ged),
            "regions": {
                c: {"n_pred": e["n_pred"], "ref_len": e["ref_len"],
                    "tp": list(e["tp"])}
                for c, e in sorted(self.regions.items())
            },
        }
        return out

    @classmethod
    def from_dict(cls, data):
        counts = data["counts"]
        report = cls()
        report.samples = counts["samples"]
        report.graphs = counts["graphs"]
        report.text = {k: list(v) for k, v in counts["text"].items()}
        report.sper = {int(n): list(v) for n, v in counts["sper"].items()}
        report.ged = list(counts["ged"])
        report.regions = {
            c: {"n_pred": e["n_pred"], "ref_len": e["ref_len"],
                "tp": list(e["tp"])}
            for c, e in counts["regions"].items()
        }
        return report

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def has_layout(seq):
    return any(is_tag(t) for t in seq)


def evaluate_corpus(preds, refs, page_ns=(1, 2, 3)):
    """MetricReport for paired token sequences.

    Layout metrics use the documents whose reference carries layout tags;
    predictions are parsed leniently. Page-group rates are computed for
    every n that divides the number of documents.
    """
    preds = [TokenSequence.from_text(p) if isinstance(p, str) else p
             for p in preds]
    refs = [TokenSequence.from_text(r) if isinstance(r, str) else r
            for r in refs]
    report = MetricReport().add_text(preds, refs)
    for n in page_ns:
        if refs and len(refs) % n == 0:
            report.add_pages(preds, refs, n)
        else:
            log.warning("%d documents do not form groups of %d pages",
                        len(refs), n)
    laid_out = [i for i, r in enumerate(refs) if has_layout(r)]
    if laid_out:
        report.add_graphs(
            [tokens_to_graph(preds[i], strict=False) for i in laid_out],
            [tokens_to_graph(refs[i], strict=False) for i in laid_out],
        )
    return report


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
