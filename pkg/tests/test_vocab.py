import numpy as np
import pytest
from hypothesis import given, strategies as st

from pivotcap.vocab import BOS, EOS, PAD, UNK, TokenSeq, Vocab, build_vocab, make_batch

words = st.sampled_from(["a", "b", "c", "d", "e", "f"])
sentences = st.lists(st.lists(words, min_size=1, max_size=6), min_size=1, max_size=20)


def test_min_freq_drops_rare_tokens():
    sents = [["cat"]] * 4 + [["dog"]] * 5
    v = build_vocab(sents, min_freq=5)
    assert "dog" in v and "cat" not in v
    assert v.id("cat") == UNK


def test_ordering_by_count_then_lexical():
    v = build_vocab([["b", "a", "c", "c"]], min_freq=1)
    assert v.words() == ["c", "a", "b"]
    assert v.itos[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]


@given(sentences)
def test_min_freq_one_keeps_everything(sents):
    v = build_vocab(sents, min_freq=1)
    assert set(v.words()) == {w for s in sents for w in s}
    assert build_vocab(sents, min_freq=1) == v


@given(sentences)
def test_lines_roundtrip(sents):
    v = build_vocab(sents, min_freq=1)
    back = Vocab.from_lines(v.to_lines())
    assert back == v and back.counts == v.counts


def test_errors():
    with pytest.raises(ValueError):
        build_vocab([], min_freq=1)
    with pytest.raises(ValueError):
        build_vocab([["a"]], min_freq=0)
    with pytest.raises(ValueError):
        Vocab(["a", "a"])


def test_decode_stops_at_eos():
    v = Vocab(["x", "y"])
    assert v.decode([BOS, 4, 5, EOS, 4]) == ["x", "y"]
    assert v.decode([4, PAD, 5], strip=False) == ["x", "<pad>", "y"]


def test_token_seq_views():
    s = TokenSeq.frame([7, 8])
    assert s.ids == (BOS, 7, 8, EOS)
    assert s.words == (7, 8) and s.inputs == (BOS, 7, 8) and s.targets == (7, 8, EOS)


@given(st.lists(st.lists(st.integers(4, 20), max_size=6), min_size=1, max_size=5))
def test_make_batch_layout(word_lists):
    seqs = [TokenSeq.frame(w) for w in word_lists]
    b = make_batch(seqs)
    for i, (s, w) in enumerate(zip(seqs, word_lists)):
        n = len(s) - 1
        assert b.inputs[i, :n].tolist() == list(s.inputs)
        assert b.targets[i, :n].tolist() == list(s.targets)
        assert b.mask[i].sum() == n and not b.mask[i, n:].any()
        assert b.words[i, :len(w)].tolist() == w and b.word_mask[i].sum() == len(w)
        assert np.all(b.targets[i, n:] == PAD)
