#!/usr/bin/env python3
"""
Token sequences and the vocabulary file.

Text and layout structure share one vocabulary: every character is a
token, and every layout tag (``<D>``, ``</D>``, ... ``</B>``) is a single
token. The vocabulary file lists one token per line; ids are line
numbers. Lines 0..3 are always ``<pad>``, ``<sot>``, ``<eot>``,
``<unk>``. Space and line break are written as ``<sp>`` and ``<lb>``.

>>> seq = TokenSequence.from_text("<P>ab c</P>")
>>> seq.tokens
['<P>', 'a', 'b', ' ', 'c', '</P>']
>>> seq.text()
'ab c'
"""
import re

from .lib.errors import TokenError

PAD, SOT, EOT, UNK = "<pad>", "<sot>", "<eot>", "<unk>"
SPECIALS = (PAD, SOT, EOT, UNK)
PAD_ID, SOT_ID, EOT_ID, UNK_ID = range(4)

LAYOUT_KINDS = "DPSNAB"
LAYOUT_TAGS = tuple(
    tag for k in LAYOUT_KINDS for tag in ("<{}>".format(k), "</{}>".format(k))
)
TAG_RE = re.compile(r"</?[{}]>".format(LAYOUT_KINDS))

# Characters that cannot appear verbatim on a vocabulary line.
FILE_ESCAPES = {" ": "<sp>", "\n": "<lb>"}
FILE_UNESCAPES = {v: k for k, v in FILE_ESCAPES.items()}


def is_tag(token):
    return token in LAYOUT_TAGS


def tokenize(text):
    """Split text into tag tokens and single characters.

    >>> tokenize("<D>x\\ny</D>")
    ['<D>', 'x', '\\n', 'y', '</D>']
    """
    tokens = []
    pos = 0
    for m in TAG_RE.finditer(text):
        tokens.extend(text[pos:m.start()])
        tokens.append(m.group(0))
        pos = m.end()
    tokens.extend(text[pos:])
    return tokens


class TokenSequence:
    """Ordered list of token strings.

    ``truncated`` is set by greedy decoding that hit its length limit
    without emitting ``<eot>``.
    """

    def __init__(self, tokens=(), truncated=False):
        self.tokens = list(tokens)
        self.truncated = truncated

    @classmethod
    def from_text(cls, text):
        return cls(tokenize(text))

    @classmethod
    def from_ids(cls, ids, vocab, truncated=False):
        return cls([vocab.token(i) for i in ids], truncated)

    def to_ids(self, vocab, sot=False, eot=False):
        ids = [vocab.id(t) for t in self.tokens]
        if sot:
            ids.insert(0, SOT_ID)
        if eot:
            ids.append(EOT_ID)
        return ids

    def without_specials(self):
        return TokenSequence(
            [t for t in self.tokens if t not in SPECIALS], self.truncated
        )

    def to_text(self):
        """Literal form with tags, specials dropped."""
        return "".join(t for t in self.tokens if t not in SPECIALS)

    def text(self):
        """Text content with tags and specials dropped."""
        return "".join(
            t for t in self.tokens if t not in SPECIALS and not is_tag(t)
        )

    def layout_mask(self):
        return [is_tag(t) for t in self.tokens]

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __getitem__(self, i):
        return self.tokens[i]

    def __eq__(self, other):
        if not isinstance(other, TokenSequence):
            return NotImplemented
        return self.tokens == other.tokens

    def __repr__(self):
        return "TokenSequence({!r})".format(self.to_text())


class Vocabulary:
    """Token <-> id mapping backed by a one-token-per-line file."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:4]) != SPECIALS:
            raise TokenError(
                "vocabulary must start with {}".format(", ".join(SPECIALS))
            )
        if len(set(tokens)) != len(tokens):
            raise TokenError("vocabulary has duplicate tokens")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, alphabet):
        """Specials, layout tags, then the sorted characters of alphabet.

        >>> v = Vocabulary.build("ba")
        >>> len(v), v.id("a"), v.id(" ")
        (20, 18, 17)
        """
        chars = sorted(set(alphabet) | {" ", "\n"})
        return cls(list(SPECIALS) + list(LAYOUT_TAGS) + chars)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            lines = f.read().split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(FILE_UNESCAPES.get(line, line) for line in lines)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.tokens:
                f.write(FILE_ESCAPES.get(t, t))
                f.write("\n")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token, strict=False):
        if token in self.index:
            return self.index[token]
        if strict:
            raise TokenError("token {!r} not in vocabulary".format(token))
        return UNK_ID

    def token(self, i):
        if not 0 <= i < len(self.tokens):
            raise TokenError(
                "token id {} outside vocabulary of {}".format(i, len(self))
            )
        return self.tokens[i]

    @property
    def tag_ids(self):
        return [self.index[t] for t in LAYOUT_TAGS if t in self.index]

    @property
    def text_ids(self):
        """Ids of ordinary text tokens (not specials, not tags)."""
        return [
            i for i, t in enumerate(self.tokens)
            if t not in SPECIALS and not is_tag(t)
        ]

    def encode(self, text, sot=True, eot=True):
        return TokenSequence.from_text(text).to_ids(self, sot=sot, eot=eot)

    def to_list(self):
        return list(self.tokens)


if __name__ == "__main__":
    import doctest
    failure_count, test_count = doctest.testmod()
    assert test_count > 0
    assert failure_count == 0, "Doctests failed!"
