"""Vocabularies, framed token sequences and padded batches."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Bijection between surface tokens and ids; ids 0-3 are PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str], counts: dict[str, int] | None = None):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")
        self.counts = dict(counts or {})

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i in (PAD, BOS):
                continue
            if strip and i == EOS:
                break
            out.append(self.itos[i])
        return out

    def words(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.itos[len(SPECIALS):]

    def to_lines(self) -> list[str]:
        return [f"{t}\t{self.counts.get(t, 0)}" for t in self.words()]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "Vocab":
        tokens, counts = [], {}
        for line in lines:
            line = line.rstrip("\n")
            if not line:
                continue
            tok, _, cnt = line.partition("\t")
            tokens.append(tok)
            counts[tok] = int(cnt or 0)
        return cls(tokens, counts)


def build_vocab(sentences: Iterable[Sequence[str]], min_freq: int = 5) -> Vocab:
    """Keep tokens seen at least ``min_freq`` times, ordered by count then lexically."""
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    counter: Counter[str] = Counter()
    n = 0
    for sent in sentences:
        counter.update(sent)
        n += 1
    if n == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counter.items() if c >= min_freq and t not in SPECIALS),
                  key=lambda t: (-counter[t], t))
    return Vocab(kept, {t: counter[t] for t in kept})


@dataclass(frozen=True)
class TokenSeq:
    """Ids framed as ``BOS w_1 .. w_n EOS``."""

    ids: tuple[int, ...]

    @classmethod
    def frame(cls, word_ids: Iterable[int]) -> "TokenSeq":
        return cls((BOS, *map(int, word_ids), EOS))

    @classmethod
    def from_tokens(cls, tokens: Sequence[str], vocab: Vocab) -> "TokenSeq":
        return cls.frame(vocab.encode(tokens))

    @property
    def words(self) -> tuple[int, ...]:
        end = len(self.ids) - 1 if self.ids and self.ids[-1] == EOS else len(self.ids)
        start = 1 if self.ids and self.ids[0] == BOS else 0
        return self.ids[start:end]

    @property
    def inputs(self) -> tuple[int, ...]:
        return self.ids[:-1]

    @property
    def targets(self) -> tuple[int, ...]:
        return self.ids[1:]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Batch:
    """Right-padded teacher-forcing arrays for a list of sequences."""

    inputs: np.ndarray   # [B, T] decoder inputs, BOS first
    targets: np.ndarray  # [B, T]
    mask: np.ndarray     # [B, T] bool
    words: np.ndarray    # [B, M] unframed ids for encoders
    word_mask: np.ndarray  # [B, M] bool

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def make_batch(seqs: Sequence[TokenSeq]) -> Batch:
    if not seqs:
        raise ValueError("empty batch")
    B = len(seqs)
    T = max(len(s) - 1 for s in seqs)
    M = max(1, max(len(s.words) for s in seqs))
    inputs = np.full((B, T), PAD, dtype=np.int64)
    targets = np.full((B, T), PAD, dtype=np.int64)
    mask = np.zeros((B, T), dtype=bool)
    words = np.full((B, M), PAD, dtype=np.int64)
    word_mask = np.zeros((B, M), dtype=bool)
    for b, s in enumerate(seqs):
        n = len(s) - 1
        inputs[b, :n] = s.inputs
        targets[b, :n] = s.targets
        mask[b, :n] = True
        w = s.words
        words[b, :len(w)] = w
        word_mask[b, :len(w)] = True
    return Batch(inputs, targets, mask, words, word_mask)
