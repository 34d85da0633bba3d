import math

import pytest
from hypothesis import given, strategies as st

from pivotcap.metrics import cider, cider_per_item, corpus_bleu, ngrams, self_bleu, sentence_bleu

S = str.split
tok = st.sampled_from(list("abcdef"))
sent = st.lists(tok, min_size=1, max_size=8)


def approx(x):
    return pytest.approx(x, abs=1e-9)


def test_ngrams():
    assert ngrams("a b a b".split(), 2) == {("a", "b"): 2, ("b", "a"): 1}
    assert ngrams(["a"], 2) == {}


BLEU_CASES = [
    # clipping: one "a" in the reference caps four candidate "a"s
    (["a a a a"], [["a b"]], [0.25, 0.0, 0.0, 0.0]),
    (["the cat sat on the mat"], [["the cat sat on the mat"]], [1.0, 1.0, 1.0, 1.0]),
    # brevity penalty exp(1 - 4/2); trigram total is zero
    (["the cat"], [["the cat sat on"]], [math.exp(-1), math.exp(-1), 0.0, 0.0]),
    # closest reference length (2 beats 5), then all n-grams found in the union of references
    (["a b c"], [["a b c d e", "a b"]], [1.0, 1.0, 1.0, 0.0]),
    # corpus-level pooling: p1 = 3/4, p2 = 1/2
    (["a b", "c d"], [["a b"], ["c e"]], [0.75, math.sqrt(0.375), 0.0, 0.0]),
    # clipping takes the per-reference maximum count
    (["the the the"], [["the cat", "the the dog"]], [2 / 3, math.sqrt(1 / 3), 0.0, 0.0]),
]


@pytest.mark.parametrize("cands,refs,expected", BLEU_CASES)
def test_corpus_bleu_hand_values(cands, refs, expected):
    got = corpus_bleu([S(c) for c in cands], [[S(r) for r in rs] for rs in refs])
    assert got == [approx(e) for e in expected]


def test_bleu_brevity_tie_prefers_shorter_reference():
    # |cand| = 3 is equidistant from 2 and 4: the shorter one (2) is used, so no penalty
    assert corpus_bleu([S("a b c")], [[S("a b"), S("a b c d")]])[0] == approx(1.0)


def test_bleu_errors():
    with pytest.raises(ValueError):
        corpus_bleu([], [])
    with pytest.raises(ValueError):
        corpus_bleu([S("a")], [])
    with pytest.raises(ValueError):
        corpus_bleu([S("a")], [[]])


@given(st.lists(st.tuples(sent, st.lists(sent, min_size=1, max_size=3)), min_size=1, max_size=6))
def test_bleu_bounds_and_item_order(items):
    cands, refs = [c for c, _ in items], [r for _, r in items]
    b = corpus_bleu(cands, refs)
    assert all(0.0 <= x <= 1.0 + 1e-12 for x in b)
    assert corpus_bleu(cands[::-1], refs[::-1]) == [approx(x) for x in b]
    assert corpus_bleu(cands, [[c] for c in cands])[0] == approx(1.0)


def test_cider_identity_two_item_disjoint():
    cands = [S("a man rides a horse"), S("two dogs play in snow")]
    assert cider(cands, [[c] for c in cands]) == approx(10.0)


def test_cider_zero_for_unrelated():
    refs = [[S("a b c d")], [S("e f g h")]]
    assert cider([S("x y z w"), S("q r s t")], refs) == approx(0.0)


@given(st.lists(st.tuples(sent, st.lists(sent, min_size=1, max_size=3)), min_size=2, max_size=5),
       st.floats(0.1, 10.0))
def test_cider_idf_scale_invariance(items, k):
    cands, refs = [c for c, _ in items], [r for _, r in items]
    one = cider_per_item(cands, refs, idf=lambda g: 1.0 + len(g))
    scaled = cider_per_item(cands, refs, idf=lambda g: k * (1.0 + len(g)))
    assert scaled == [pytest.approx(x, abs=1e-9) for x in one]
    assert all(-1e-12 <= x <= 10.0 + 1e-9 for x in one)


def test_cider_errors():
    with pytest.raises(ValueError):
        cider([S("a")], [[S("a")]])
    with pytest.raises(ValueError):
        cider([S("a"), S("b")], [[S("a")]])


def test_self_bleu_identical_is_one():
    cands = [S("a man riding a horse")] * 4
    assert self_bleu(cands, 5) == {n: approx(1.0) for n in range(2, 6)}


def test_self_bleu_matches_pairwise_sentence_bleu():
    cands = [S("a b c d"), S("a b x y"), S("q b c d e")]
    ref = {n: 0.0 for n in range(2, 5)}
    for i, c in enumerate(cands):
        others = cands[:i] + cands[i + 1:]
        b = sentence_bleu(c, others, 4)
        for n in ref:
            ref[n] += b[n - 1] / 3
    assert self_bleu(cands, 4) == {n: approx(v) for n, v in ref.items()}


@given(st.lists(sent, min_size=2, max_size=6))
def test_self_bleu_order_invariant_and_bounded(cands):
    a, b = self_bleu(cands, 4), self_bleu(cands[::-1], 4)
    assert all(a[n] == pytest.approx(b[n], abs=1e-12) and -1e-12 <= a[n] <= 1 + 1e-12 for n in a)


def test_self_bleu_diverse_is_low():
    cands = [S("a b c d"), S("e f g h"), S("i j k l")]
    assert self_bleu(cands, 4)[4] < 1e-6
    with pytest.raises(ValueError):
        self_bleu([S("a")])
