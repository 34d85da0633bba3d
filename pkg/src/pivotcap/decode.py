"""Greedy and beam-search decoding over any step function, and two-stage pivot captioning.

A step function maps ``(state, tokens[B]) -> (log_probs[B, V], state)`` where
``state`` is batched over rows and supports ``state.select(rows)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Captioner, StepFn, Translator
from .vocab import BOS, EOS, TokenSeq, Vocab


class DegenerateCaptionError(ValueError):
    """The captioner produced an empty pivot sentence."""


@dataclass(frozen=True)
class BeamConfig:
    k: int = 5
    T_max: int = 16
    vocab_size: int | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("beam size k must be >= 1")
        if self.T_max < 1:
            raise ValueError("T_max must be >= 1")


CAPTIONER_BEAM = BeamConfig(k=5, T_max=16)
TRANSLATOR_BEAM = BeamConfig(k=10, T_max=20)


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]   # BOS-initiated
    score: float              # cumulative log-probability, nats
    finished: bool = False
    row: int = -1             # row of the batched decoder state


@dataclass
class DecodeResult:
    seq: TokenSeq
    score: float
    truncated: bool = False


def greedy_decode(step_fn, init_state, T_max: int) -> DecodeResult:
    """Arg-max token at every step (lowest id on ties) until EOS or ``T_max`` tokens."""
    tokens = [BOS]
    score = 0.0
    state = init_state
    for _ in range(T_max):
        logp, state = step_fn(state, np.array([tokens[-1]]))
        w = int(np.argmax(logp[0]))
        score += float(logp[0, w])
        tokens.append(w)
        if w == EOS:
            return DecodeResult(TokenSeq(tuple(tokens)), score)
    return DecodeResult(TokenSeq(tuple(tokens)), score, truncated=True)


def _better(a: Hypothesis, b: Hypothesis) -> bool:
    """Higher score wins; ties go to the lexicographically lower ids, then the shorter."""
    if a.score != b.score:
        return a.score > b.score
    if a.tokens != b.tokens:
        return a.tokens < b.tokens
    return len(a.tokens) < len(b.tokens)


def beam_search(step_fn, init_state, cfg: BeamConfig) -> DecodeResult:
    """Keep the ``k`` best unfinished hypotheses per step by raw cumulative log-probability.

    Candidates ending in EOS that rank above the k-th surviving unfinished
    candidate move to the completed pool.  Search stops at ``T_max`` or once the
    best completed score is at least the best live score (extensions only lower
    a score).  Without any completed hypothesis the best live one is returned
    with ``truncated=True``.
    """
    live = [Hypothesis((BOS,), 0.0, row=0)]
    state = init_state
    done: list[Hypothesis] = []
    for _ in range(cfg.T_max):
        last = np.array([h.tokens[-1] for h in live], dtype=np.int64)
        logp, state = step_fn(state, last)
        n, V = logp.shape
        scores = np.array([h.score for h in live])[:, None] + logp
        # order: score desc, own log-prob desc (keeps rounding ties faithful to the
        # per-row arg-max), token id asc, parent rank asc
        order = np.lexsort((np.repeat(np.arange(n), V), np.tile(np.arange(V), n),
                            -logp.reshape(-1), -scores.reshape(-1)))
        survivors: list[Hypothesis] = []
        for flat in order:
            i, w = divmod(int(flat), V)
            hyp = Hypothesis(live[i].tokens + (w,), float(scores[i, w]), row=i)
            if w == EOS:
                hyp.finished = True
                done.append(hyp)
            else:
                survivors.append(hyp)
                if len(survivors) == cfg.k:
                    break
        if not survivors:
            break
        state = state.select([h.row for h in survivors])
        for r, h in enumerate(survivors):
            h.row = r
        live = survivors
        best_done = _best(done)
        if best_done is not None and best_done.score >= max(h.score for h in live):
            break
    best_done = _best(done)
    if best_done is not None:
        return DecodeResult(TokenSeq(best_done.tokens), best_done.score)
    best_live = _best(live)
    return DecodeResult(TokenSeq(best_live.tokens), best_live.score, truncated=True)


def _best(hyps: list[Hypothesis]) -> Hypothesis | None:
    best = None
    for h in hyps:
        if best is None or _better(h, best):
            best = h
    return best


def sequence_logprob(step_fn, init_state, seq: TokenSeq) -> float:
    """Sum of step log-probabilities of ``seq``'s tokens after BOS, recomputed row by row."""
    state = init_state
    total = 0.0
    for prev, nxt in zip(seq.ids[:-1], seq.ids[1:]):
        logp, state = step_fn(state, np.array([prev]))
        total += float(logp[0, nxt])
    return total


def remap(ids, src: Vocab, dst: Vocab) -> list[int]:
    """Re-express ids from ``src`` in ``dst`` by surface token; unknown tokens become UNK."""
    return dst.encode(src.itos[int(i)] for i in ids)


@dataclass
class TwoStageOutput:
    target: TokenSeq
    pivot: TokenSeq
    target_score: float
    pivot_score: float


def two_stage_caption(captioner: Captioner, translator: Translator, feat,
                      cap_vocab: Vocab, src_vocab: Vocab,
                      cfg1: BeamConfig = CAPTIONER_BEAM, cfg2: BeamConfig = TRANSLATOR_BEAM) -> TwoStageOutput:
    """Beam-decode a pivot caption, re-map it into the translator's source vocabulary, translate it."""
    pivot = beam_search(StepFn(captioner), captioner.start(np.atleast_2d(feat)), cfg1)
    words = pivot.seq.words
    if not words:
        raise DegenerateCaptionError("captioner decoded an empty pivot sentence")
    src_ids = remap(words, cap_vocab, src_vocab)
    target = beam_search(StepFn(translator), translator.start(np.array([src_ids])), cfg2)
    return TwoStageOutput(target.seq, pivot.seq, target.score, pivot.score)
