#!/usr/bin/env python3
"""
Text correction that leaves the layout alone.

The raw decoder output is split into a skeleton of tags (kept verbatim)
and text runs. Runs are grouped into segments at one of three levels,
each segment goes through a text -> text corrector, and the corrected
text is poured back into the skeleton.

    sentence   every line of a run
    paragraph  every run
    page       all runs of one page, joined by a blank line

Tags the corrector produces are removed with a warning, so the multiset
and order of layout tags never change.
"""
import logging

from ..lib.errors import ParameterError
from ..tokens import SPECIALS, TokenSequence, is_tag, tokenize

log = logging.getLogger(__name__)

SEGMENT_LEVELS = ("sentence", "paragraph", "page")
PAGE_SEPARATOR = "\n\n"


def identity_corrector(text):
    return text


def _split_layout(seq):
    skeleton, runs, pages = [], [], []
    page = -1
    current = None
    for token in seq:
        if is_tag(token) or token in SPECIALS:
            if current is not None:
                runs.append(current)
                current = None
            if token == "<P>":
                page += 1
            skeleton.append(token)
            continue
        if current is None:
            current = []
            skeleton.append(None)
            pages.append(page)
        current.append(token)
    if current is not None:
        runs.append(current)
    return skeleton, runs, pages


def extract_layout(seq):
    """Split seq into (skeleton, runs, pages).

    skeleton lists tags/specials verbatim and ``None`` where a text run
    goes; runs holds the run texts; pages the page index of each run.
    """
    skeleton, runs, pages = _split_layout(seq)
    return skeleton, ["".join(run) for run in runs], pages


def _split_tokens(tokens, separator):
    """Split a token list on a character sequence."""
    sep = list(separator)
    parts, current, i = [], [], 0
    while i < len(tokens):
        if tokens[i:i + len(sep)] == sep:
            parts.append(current)
            current = []
            i += len(sep)
            continue
        current.append(tokens[i])
        i += 1
    parts.append(current)
    return parts


def _retokenize(text, source, where):
    """Tokens for corrector output; source is reused when text is unchanged.

    Unchanged runs are never re-tokenized, so character runs such as
    ``<``, ``P``, ``>`` survive instead of turning into a tag.
    """
    if text == "".join(source):
        return list(source)
    tokens = tokenize(text)
    if any(is_tag(t) for t in tokens):
        log.warning("corrector emitted layout tags in %s; removed", where)
        tokens = [t for t in tokens if not is_tag(t)]
    return tokens


def _correct_sentences(run, corrector, where):
    out = []
    for n, line in enumerate(_split_tokens(run, "\n")):
        if n:
            out.append("\n")
        out.extend(_retokenize(corrector("".join(line)), line, where))
    return out


def segment_runs(runs, pages, level):
    """Groups of run indices corrected together."""
    if level not in SEGMENT_LEVELS:
        raise ParameterError("unknown segment level {!r}".format(level))
    if level != "page":
        return [[i] for i in range(len(runs))]
    groups = {}
    for i, p in enumerate(pages):
        groups.setdefault(p, []).append(i)
    return [groups[p] for p in sorted(groups)]


def correct_runs(runs, pages, corrector, level="paragraph"):
    """Correct token runs; returns one token list per run."""
    out = [list(run) for run in runs]
    for group in segment_runs(runs, pages, level):
        where = "run {}".format(group[0])
        if level == "sentence":
            out[group[0]] = _correct_sentences(runs[group[0]], corrector,
                                               where)
            continue
        if len(group) == 1:
            run = runs[group[0]]
            out[group[0]] = _retokenize(corrector("".join(run)), run, where)
            continue
        texts = ["".join(runs[i]) for i in group]
        parts = None
        if not any(PAGE_SEPARATOR in t for t in texts):
            joined = PAGE_SEPARATOR.join(texts)
            corrected = corrector(joined)
            if corrected == joined:
                parts = [list(runs[i]) for i in group]
            else:
                parts = _split_tokens(
                    _retokenize(corrected, [], where), PAGE_SEPARATOR
                )
        if parts is None or len(parts) != len(group):
            log.warning(
                "corrector changed the segmentation of %s; "
                "correcting its runs one by one", where
            )
            parts = [
                _retokenize(corrector(t), runs[i], where)
                for i, t in zip(group, texts)
            ]
        for i, part in zip(group, parts):
            out[i] = part
    return out


def reassemble(skeleton, runs):
    tokens = []
    it = iter(runs)
    for item in skeleton:
        if item is None:
            tokens.extend(next(it))
        else:
            tokens.append(item)
    return tokens


def postprocess_pipeline(raw, corrector=identity_corrector,
                         level="paragraph"):
    """Correct the text of raw while keeping every tag in place.

    >>> seq = TokenSequence.from_text(
    ...     "<D><P><N>1</N><S><B>ab</B></S></P></D>")
    >>> postprocess_pipeline(seq, str.upper).to_text()
    '<D><P><N>1</N><S><B>AB</B></S></P></D>'
    """
    skeleton, runs, pages = _split_layout(raw)
    corrected = correct_runs(runs, pages, corrector, level)
    return TokenSequence(
        reassemble(skeleton, corrected), getattr(raw, "truncated", False)
    )


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
