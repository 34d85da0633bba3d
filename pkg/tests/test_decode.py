import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pivotcap.decode import (BeamConfig, DegenerateCaptionError, beam_search, greedy_decode, remap,
                             sequence_logprob, two_stage_caption)
from pivotcap.models import Captioner, Dims, Translator, step_fn
from pivotcap.rng import Rng
from pivotcap.vocab import BOS, EOS, UNK, TokenSeq, Vocab

D = Dims(4, 4, 3, 3)


def tiny_captioner(seed, V=5, scale=1.5):
    m = Captioner(V, D, Rng(seed, "tiny"))
    for k, (_, p) in enumerate(m.named_parameters()):
        p.data = Rng(seed, "spread", k).normal(p.shape, scale)
    return m, Rng(seed, "feat").normal((1, D.D_img))


@pytest.mark.parametrize("seed", range(100))
def test_beam_one_is_greedy(seed):
    m, f = tiny_captioner(seed, V=8)
    g = greedy_decode(step_fn(m), m.start(f), 6)
    b = beam_search(step_fn(m), m.start(f), BeamConfig(1, 6))
    assert g.seq == b.seq and g.score == b.score and g.truncated == b.truncated


def brute_force(m, f, V, T_max):
    best = None
    for n in range(T_max):
        for words in itertools.product([w for w in range(V) if w != EOS], repeat=n):
            seq = TokenSeq((BOS, *words, EOS))
            s = sequence_logprob(step_fn(m), m.start(f), seq)
            if best is None or s > best[0] + 1e-12:
                best = (s, seq)
    return best


@pytest.mark.parametrize("seed", range(12))
def test_exhaustive_beam_is_argmax(seed):
    V, T_max = 5, 4
    m, f = tiny_captioner(seed, V)
    s, seq = brute_force(m, f, V, T_max)
    r = beam_search(step_fn(m), m.start(f), BeamConfig(V ** T_max, T_max))
    assert r.seq == seq and abs(r.score - s) < 1e-9 and not r.truncated


@given(st.integers(0, 10_000), st.integers(1, 6))
def test_beam_score_recomputes(seed, k):
    m, f = tiny_captioner(seed, V=7)
    r = beam_search(step_fn(m), m.start(f), BeamConfig(k, 8))
    assert abs(sequence_logprob(step_fn(m), m.start(f), r.seq) - r.score) < 1e-9
    assert r.seq.ids[0] == BOS and len(r.seq) <= 9
    assert r.truncated == (r.seq.ids[-1] != EOS)


@given(st.integers(0, 10_000))
def test_wider_beam_never_scores_worse_on_completed(seed):
    m, f = tiny_captioner(seed, V=5)
    exact = beam_search(step_fn(m), m.start(f), BeamConfig(5 ** 4, 4))
    for k in (1, 2, 3):
        r = beam_search(step_fn(m), m.start(f), BeamConfig(k, 4))
        if not r.truncated:
            assert r.score <= exact.score + 1e-12


def test_truncation_flag_when_eos_unreachable():
    def no_eos(state, tokens):
        lp = np.full((len(tokens), 5), -50.0)
        lp[:, 4] = 0.0
        lp[:, EOS] = -np.inf
        return lp, state

    class S:
        def select(self, rows):
            return self
    r = beam_search(no_eos, S(), BeamConfig(2, 3))
    assert r.truncated and r.seq.ids == (BOS, 4, 4, 4)
    g = greedy_decode(no_eos, S(), 3)
    assert g.truncated and g.seq == r.seq


def test_beam_config_validation():
    with pytest.raises(ValueError):
        BeamConfig(0, 3)
    with pytest.raises(ValueError):
        BeamConfig(2, 0)


def test_remap_by_surface_token():
    a, b = Vocab(["x", "y", "z"]), Vocab(["z", "x"])
    assert remap([4, 5, 6], a, b) == [b.id("x"), UNK, b.id("z")]


def test_two_stage_shapes_and_degenerate():
    V = 9
    cap_vocab = Vocab([f"p{i}" for i in range(V - 4)])
    src_vocab = Vocab([f"p{i}" for i in range(V - 4)][::-1])
    cap, f = tiny_captioner(3, V)
    mt = Translator(V, V, D, Rng(1, "mt"))
    out = two_stage_caption(cap, mt, f[0], cap_vocab, src_vocab, BeamConfig(3, 6), BeamConfig(3, 6))
    assert out.pivot.ids[0] == BOS and out.target.ids[0] == BOS
    assert out.pivot_score <= 0 and out.target_score <= 0

    cap.out_proj.b.data[:] = -100.0
    cap.out_proj.b.data[EOS] = 100.0
    with pytest.raises(DegenerateCaptionError):
        two_stage_caption(cap, mt, f[0], cap_vocab, src_vocab)
