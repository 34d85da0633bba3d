"""Corpus BLEU, CIDEr and Self-BLEU over token sequences (ids or strings)."""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Sequence

Tokens = Sequence[Hashable]

SELF_BLEU_EPS = 1e-9


def ngrams(tokens: Tokens, n: int) -> Counter:
    """N-gram table of order ``n`` (1 <= n <= 4 in practice)."""
    toks = tuple(tokens)
    return Counter(toks[i:i + n] for i in range(len(toks) - n + 1))


def _closest_ref_len(c: int, ref_lens: Sequence[int]) -> int:
    return min(ref_lens, key=lambda r: (abs(r - c), r))


def _combine(precisions: Sequence[float], c: int, r: int, max_n: int) -> list[float]:
    if c == 0:
        return [0.0] * max_n
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    out = []
    log_sum = 0.0
    dead = False
    for n in range(1, max_n + 1):
        p = precisions[n - 1]
        if p <= 0.0:
            dead = True
        if dead:
            out.append(0.0)
            continue
        log_sum += math.log(p)
        out.append(bp * math.exp(log_sum / n))
    return out


def corpus_bleu(cands: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], max_n: int = 4) -> list[float]:
    """Unsmoothed corpus BLEU; returns ``[B@1, ..., B@max_n]`` in [0, 1]."""
    if not cands:
        raise ValueError("corpus_bleu: empty candidate list")
    if len(cands) != len(refs):
        raise ValueError(f"corpus_bleu: {len(cands)} candidates but {len(refs)} reference sets")
    clipped = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref_set in zip(cands, refs):
        if not ref_set:
            raise ValueError("corpus_bleu: empty reference set")
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), [len(r) for r in ref_set])
        for n in range(1, max_n + 1):
            counts = ngrams(cand, n)
            max_ref: Counter = Counter()
            for ref in ref_set:
                max_ref |= ngrams(ref, n)
            clipped[n - 1] += sum(min(k, max_ref[g]) for g, k in counts.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    precisions = [clipped[i] / totals[i] if totals[i] else 0.0 for i in range(max_n)]
    return _combine(precisions, c_len, r_len, max_n)


def sentence_bleu(cand: Tokens, ref_set: Sequence[Tokens], max_n: int = 4,
                  eps: float = SELF_BLEU_EPS) -> list[float]:
    """BLEU of one sentence; zero-match orders get ``eps`` in the numerator."""
    if not ref_set:
        raise ValueError("sentence_bleu: empty reference set")
    r = _closest_ref_len(len(cand), [len(x) for x in ref_set])
    precisions = []
    for n in range(1, max_n + 1):
        counts = ngrams(cand, n)
        max_ref: Counter = Counter()
        for ref in ref_set:
            max_ref |= ngrams(ref, n)
        total = max(len(cand) - n + 1, 0)
        hit = sum(min(k, max_ref[g]) for g, k in counts.items())
        precisions.append(hit / total if hit else eps / max(total, 1))
    return _combine(precisions, len(cand), r, max_n)


def self_bleu(cands: Sequence[Tokens], max_n: int = 4) -> dict[int, float]:
    """Mean sentence BLEU of each candidate against all the others.

    Returns ``{n: Self-B@n}`` for ``n = 2 .. max_n``; lower means more diverse.
    """
    if len(cands) < 2:
        raise ValueError("self_bleu needs at least two candidates")
    N = len(cands)
    tables = [[ngrams(c, n) for n in range(1, max_n + 1)] for c in cands]
    # per order: n-gram -> two largest (count, owner) pairs, so "max over others" is O(1)
    top2: list[dict] = [dict() for _ in range(max_n)]
    for j in range(N):
        for n in range(max_n):
            for g, k in tables[j][n].items():
                best = top2[n].get(g)
                if best is None:
                    top2[n][g] = [(k, j), (0, -1)]
                elif k > best[0][0]:
                    best[1] = best[0]
                    best[0] = (k, j)
                elif k > best[1][0]:
                    best[1] = (k, j)
    lens = [len(c) for c in cands]
    sums = {n: 0.0 for n in range(2, max_n + 1)}
    for i in range(N):
        c = lens[i]
        r = _closest_ref_len(c, lens[:i] + lens[i + 1:])
        precisions = []
        for n in range(max_n):
            hit = 0
            for g, k in tables[i][n].items():
                (k1, o1), (k2, _) = top2[n][g]
                hit += min(k, k2 if o1 == i else k1)
            total = max(c - n, 0)
            precisions.append(hit / total if hit else SELF_BLEU_EPS / max(total, 1))
        for m in range(2, max_n + 1):
            sums[m] += _combine(precisions[:m], c, r, m)[-1]
    return {m: s / N for m, s in sums.items()}


def document_frequency(refs: Sequence[Sequence[Tokens]], n_max: int = 4) -> Counter:
    """Number of items whose reference set contains each n-gram (all orders)."""
    df: Counter = Counter()
    for ref_set in refs:
        seen = set()
        for ref in ref_set:
            for n in range(1, n_max + 1):
                seen.update(ngrams(ref, n))
        df.update(seen)
    return df


def _tfidf(tokens: Tokens, n: int, idf) -> dict:
    return {g: k * idf(g) for g, k in ngrams(tokens, n).items()}


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)


def cider_per_item(cands: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], n_max: int = 4,
                   idf=None) -> list[float]:
    """Per-item CIDEr on the 0..10 scale.

    ``idf`` defaults to ``ln(|I| / max(1, df))`` from the reference sets; passing a
    callable overrides it (used to check scale invariance).
    """
    if len(cands) < 2:
        raise ValueError("CIDEr needs at least two items for document frequencies")
    if len(cands) != len(refs):
        raise ValueError(f"cider: {len(cands)} candidates but {len(refs)} reference sets")
    if any(not r for r in refs):
        raise ValueError("cider: empty reference set")
    if idf is None:
        df = document_frequency(refs, n_max)
        log_n = math.log(len(refs))
        idf = lambda g: log_n - math.log(max(1, df.get(g, 0)))  # noqa: E731
    scores = []
    for cand, ref_set in zip(cands, refs):
        per_order = []
        for n in range(1, n_max + 1):
            vc = _tfidf(cand, n, idf)
            per_order.append(sum(_cosine(vc, _tfidf(r, n, idf)) for r in ref_set) / len(ref_set))
        scores.append(10.0 * sum(per_order) / n_max)
    return scores


def cider(cands: Sequence[Tokens], refs: Sequence[Sequence[Tokens]], n_max: int = 4) -> float:
    """Corpus CIDEr: mean of :func:`cider_per_item`."""
    per = cider_per_item(cands, refs, n_max)
    return sum(per) / len(per)
