import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pivotcap.synth import (CAPTION_TEMPLATES, Scene, SynthWorldConfig, all_scenes, caption_pivot,
                            caption_target, corpus_vocabs, feature_projection, gen_corpora, oracle_captions,
                            relexify, scene_to_feature, style_classifier_accuracy)
from pivotcap.metrics import corpus_bleu
from pivotcap.rng import Rng

SMALL = SynthWorldConfig(n_caption=300, n_parallel=400, n_target=200, n_eval=40)


@pytest.fixture(scope="module")
def corpora():
    return gen_corpora(SMALL, 7)


def test_default_config_valid():
    SynthWorldConfig().validate()
    with pytest.raises(ValueError):
        SynthWorldConfig(n_subject=99).validate()
    with pytest.raises(ValueError):
        SynthWorldConfig(n_eval=10_000).validate()
    with pytest.raises(ValueError):
        SynthWorldConfig(n_refs=7).validate()


@given(st.integers(0, 8 * 6 * 8 * 4 - 1))
def test_scene_index_roundtrip(idx):
    sizes = SynthWorldConfig().sizes
    assert Scene.from_index(idx, sizes).index(sizes) == idx


def test_noiseless_features_are_deterministic_and_distinct():
    cfg = SynthWorldConfig(noise=0.0)
    proj = feature_projection(cfg, 0)
    feats = np.array([scene_to_feature(s, cfg, Rng(1), proj) for s in all_scenes(cfg)])
    assert feats.shape == (cfg.n_scenes, cfg.feat_dim)
    s = Scene(1, 2, 3, 0)
    assert np.array_equal(scene_to_feature(s, cfg, Rng(5), proj), scene_to_feature(s, cfg, Rng(6), proj))
    sq = (feats ** 2).sum(1)
    d2 = sq[:, None] + sq[None, :] - 2 * feats @ feats.T
    assert d2[~np.eye(len(feats), dtype=bool)].min() > 1e-6
    with pytest.raises(ValueError):
        scene_to_feature(Scene(99, 0, 0, 0), cfg, None, proj)


def test_same_seed_same_corpora(corpora):
    again = gen_corpora(SMALL, 7)
    assert again.caption.sentences == corpora.caption.sentences
    assert np.array_equal(again.caption.feats, corpora.caption.feats)
    assert again.parallel.src == corpora.parallel.src and again.eval.refs == corpora.eval.refs
    other = gen_corpora(SMALL, 8)
    assert other.caption.sentences != corpora.caption.sentences


def test_sizes_lengths_and_no_leakage(corpora):
    assert len(corpora.caption.sentences) == 300 and corpora.caption.feats.shape == (300, SMALL.feat_dim)
    assert len(corpora.parallel.src) == len(corpora.parallel.tgt) == 400
    assert len(corpora.eval.refs) == 40 and all(len(r) == 5 for r in corpora.eval.refs)
    assert not set(corpora.eval.scenes) & set(corpora.caption.scenes)
    every = (corpora.caption.sentences + corpora.parallel.src + corpora.parallel.tgt + corpora.target
             + [r for rs in corpora.eval.refs for r in rs])
    assert max(map(len, every)) <= SMALL.max_len


def test_pivot_vocab_overlap_is_the_intended_content(corpora):
    v = corpus_vocabs(corpora, 1)
    shared = set(v["caption"].words()) & set(v["src"].words())
    intended = SMALL.content_words("caption", "pivot") & SMALL.content_words("translation", "pivot")
    assert shared == intended


def test_eval_refs_roundtrip_to_caption_pivot(corpora):
    d = SMALL.dictionary()
    valid = {tuple(caption_pivot(Scene.from_index(s, SMALL.sizes), t, SMALL))
             for s in corpora.eval.scenes for t in range(len(CAPTION_TEMPLATES))}
    for refs in corpora.eval.refs:
        for r in refs:
            assert tuple(relexify(r, d)) in valid


def test_domains_are_separable(corpora):
    acc = style_classifier_accuracy(SMALL, corpora.target, corpora.parallel.tgt)
    assert acc > 0.95


def test_oracle_scores_high(corpora):
    b = corpus_bleu(oracle_captions(corpora.eval, SMALL), corpora.eval.refs)
    assert b[3] > 0.9


def test_caption_target_and_pivot_align():
    cfg = SynthWorldConfig()
    for s, t in itertools.product([Scene(0, 1, 2, 3), Scene(7, 5, 7, 0)], range(len(CAPTION_TEMPLATES))):
        tgt, piv = caption_target(s, t, cfg), caption_pivot(s, t, cfg)
        assert len(tgt) == len(piv) and relexify(tgt, cfg.dictionary()) == piv
