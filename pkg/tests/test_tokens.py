#!/usr/bin/env python3

import pytest

from hand.lib.errors import TokenError
from hand.tokens import (
    EOT_ID, LAYOUT_TAGS, SOT_ID, UNK_ID, TokenSequence, Vocabulary,
    tokenize,
)


@pytest.mark.parametrize("text,tokens", [
    ("", []),
    ("ab", ["a", "b"]),
    ("<D></D>", ["<D>", "</D>"]),
    ("<X>", ["<", "X", ">"]),
    ("a<B>b c</B>", ["a", "<B>", "b", " ", "c", "</B>"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_vocabulary_layout():
    v = Vocabulary.build("ab")
    assert v.tokens[:4] == ["<pad>", "<sot>", "<eot>", "<unk>"]
    assert len(v.tag_ids) == len(LAYOUT_TAGS) == 12
    assert [v.token(i) for i in v.text_ids] == ["\n", " ", "a", "b"]


def test_vocabulary_file_roundtrip(tmp_path):
    v = Vocabulary.build("a b")
    path = str(tmp_path / "vocab.txt")
    v.save(path)
    with open(path) as f:
        lines = f.read().splitlines()
    assert "<sp>" in lines and "<lb>" in lines
    assert Vocabulary.load(path).to_list() == v.to_list()


def test_vocabulary_rejects_bad_tables():
    with pytest.raises(TokenError):
        Vocabulary(["a", "<pad>", "<sot>", "<eot>"])
    with pytest.raises(TokenError):
        Vocabulary(["<pad>", "<sot>", "<eot>", "<unk>", "a", "a"])


def test_encode_and_unknowns():
    v = Vocabulary.build("ab")
    ids = v.encode("<S>ab</S>")
    assert ids[0] == SOT_ID and ids[-1] == EOT_ID
    assert len(ids) == 6
    assert v.id("z") == UNK_ID
    with pytest.raises(TokenError):
        v.id("z", strict=True)
    with pytest.raises(TokenError):
        v.token(len(v))
    with pytest.raises(TokenError):
        TokenSequence.from_ids([-1], v)


def test_sequence_views():
    v = Vocabulary.build("ab")
    seq = TokenSequence.from_ids(v.encode("<B>a b</B>"), v, truncated=True)
    assert seq.to_text() == "<B>a b</B>"
    assert seq.text() == "a b"
    assert seq.without_specials().tokens[0] == "<B>"
    assert seq.without_specials().truncated
    assert seq.layout_mask()[1:4] == [True, False, False]
    assert seq == TokenSequence(seq.tokens)
    assert seq.to_ids(v) == v.encode("<B>a b</B>")
