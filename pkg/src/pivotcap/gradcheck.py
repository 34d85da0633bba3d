"""Finite-difference suites over every layer, model, loss and penalty (tiny sizes)."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check
from .layers import Attention, BiLSTM, Embedding, Linear, LSTMCell
from .models import Autoencoder, Captioner, Dims, Translator
from .objectives import (CaptionBatch, ParallelBatch, SharedVocabMap, TieMaps, embed_align_reg, joint_loss,
                         xe_loss)
from .rng import Rng
from .vocab import TokenSeq, Vocab, make_batch

TOLERANCE = 1e-4


@dataclass
class SuiteResult:
    name: str
    max_rel_err: float
    seconds: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def _sum_sq(t: Tensor) -> Tensor:
    # random projection keeps every output coordinate in play
    return ad.sum(ad.mul(t, Tensor(np.cos(np.arange(t.size)).reshape(t.shape) + 0.5)))


def _spread(model, rng: Rng, scale: float = 0.5):
    """Redraw every parameter at a well-conditioned scale.

    Fresh models have near-zero embeddings and output rows; gradients of order
    1e-9 would then be compared against finite-difference noise of order 1e-11.
    """
    for k, (_, p) in enumerate(model.named_parameters()):
        p.data = rng.derive(k).normal(p.shape, scale)
    return model


def _seqs(rng: Rng, V: int, n: int, max_len: int) -> list[TokenSeq]:
    out = []
    for _ in range(n):
        k = 1 + int(rng.integers(max_len))
        out.append(TokenSeq.frame((4 + rng.integers(V - 4, (k,))).tolist()))
    return out


def suites(seed: int = 0, d: int = 8, V: int = 20, T: int = 5, B: int = 2) -> dict[str, Callable[[], float]]:
    """Name -> zero-argument callable returning the suite's max relative error."""
    rng = Rng(seed, "gradcheck")
    dims = Dims(d, d, d, d)
    fd_rng = rng.derive("coords")

    def linear():
        lin = Linear(d, 3, rng.derive("lin"))
        x = ad.parameter(rng.derive("x").normal((B, d)))
        return finite_diff_check(lambda: _sum_sq(lin(x)), [lin.W, lin.b, x])

    def embedding():
        emb = Embedding(V, d, rng.derive("emb"), scale=1.0)
        ids = np.array([[4, 7, 4], [9, 0, 19]])
        return finite_diff_check(lambda: _sum_sq(emb(ids)), [emb.E])

    def lstm():
        cell = LSTMCell(d, d, rng.derive("cell"))
        x = ad.parameter(rng.derive("x").normal((B, d)))
        h = ad.parameter(rng.derive("h").normal((B, d), 0.5))
        c = ad.parameter(rng.derive("c").normal((B, d), 0.5))
        mask = np.array([True, False])

        def f():
            h1, c1 = cell(x, h, c, mask)
            return ad.add(_sum_sq(h1), _sum_sq(c1))
        return finite_diff_check(f, [cell.W, cell.b, x, h, c])

    def bilstm():
        enc = BiLSTM(d, d, rng.derive("bi"))
        xs = [ad.parameter(rng.derive("x", t).normal((B, d))) for t in range(T)]
        mask = np.ones((B, T), dtype=bool)
        mask[1, 3:] = False

        def f():
            ann, (hf, cf), (hb, cb) = enc(xs, mask)
            return ad.add(_sum_sq(ann), ad.add(_sum_sq(hf), _sum_sq(hb)))
        return finite_diff_check(f, [*enc.parameters(), *xs])

    def attention():
        att = Attention(d, 2 * d, d, rng.derive("att"))
        s = ad.parameter(rng.derive("s").normal((B, d)))
        ann = ad.parameter(rng.derive("ann").normal((B, T, 2 * d)))
        mask = np.ones((B, T), dtype=bool)
        mask[0, 2:] = False

        def f():
            ctx, w = att(s, ann, att.project_annotations(ann), mask)
            return ad.add(_sum_sq(ctx), _sum_sq(w))
        return finite_diff_check(f, [*att.parameters(), s, ann])

    feats = rng.derive("feats").normal((B, d))
    cap_seqs = _seqs(rng.derive("capseq"), V, B, T - 1)
    src_seqs = _seqs(rng.derive("src"), V, B, T - 1)
    tgt_seqs = _seqs(rng.derive("tgt"), V, B, T - 1)
    ae_seqs = _seqs(rng.derive("ae"), V, B, T - 1)
    cap_b = CaptionBatch(feats, make_batch(cap_seqs))
    mt_b = ParallelBatch(make_batch(src_seqs), make_batch(tgt_seqs))
    ae_b = make_batch(ae_seqs)

    def captioner():
        m = _spread(Captioner(V, dims, rng.derive("cap")), rng.derive("spread-cap"))
        return finite_diff_check(lambda: xe_loss(m.forward(cap_b.feats, cap_b.seqs), cap_b.seqs.targets,
                                                 cap_b.seqs.mask), m.parameters())

    def translator():
        m = _spread(Translator(V, V, dims, rng.derive("mt")), rng.derive("spread-mt"))
        return finite_diff_check(lambda: xe_loss(m.forward(mt_b.src, mt_b.tgt), mt_b.tgt.targets,
                                                 mt_b.tgt.mask), m.parameters())

    def autoencoder():
        m = _spread(Autoencoder(V, dims, rng.derive("ae")), rng.derive("spread-ae"))
        return finite_diff_check(lambda: xe_loss(m.forward(ae_b), ae_b.targets, ae_b.mask), m.parameters())

    def xe():
        logits = ad.parameter(rng.derive("logits").normal((T, V)))
        targets = rng.derive("t").integers(V, (T,))
        mask = np.array([True, True, False, True, True])
        return finite_diff_check(lambda: xe_loss(logits, targets, mask), [logits])

    words = [f"w{i}" for i in range(V - 4)]
    va, vb = Vocab(words[:12]), Vocab(words[4:][::-1])
    shared = SharedVocabMap.build(va, vb)

    def reg(trainable: str):
        def run():
            A = ad.parameter(rng.derive("A", trainable).normal((len(va), d)))
            Bm = ad.parameter(rng.derive("B", trainable).normal((len(vb), d)))
            side = A if trainable == "A" else Bm
            return finite_diff_check(lambda: embed_align_reg(A, Bm, shared, trainable=trainable), [side])
        return run

    def joint():
        jr = rng.derive("joint")
        cap = _spread(Captioner(V, dims, jr.derive("cap")), jr.derive("spread-cap"), 0.7)
        mt = _spread(Translator(V, V, dims, jr.derive("mt")), jr.derive("spread-mt"), 0.7)
        ae = _spread(Autoencoder(V, dims, jr.derive("ae")), jr.derive("spread-ae"), 0.7)
        # start the tied rows near each other: a large penalty value would swamp
        # small gradient entries in finite-difference round-off
        mt.enc_emb.E.data = cap.out_proj.W.data + jr.derive("near-p").normal(cap.out_proj.W.shape, 0.05)
        ae.out_proj.W.data = mt.out_proj.W.data + jr.derive("near-t").normal(mt.out_proj.W.shape, 0.05)
        vocab = Vocab(words)
        ties = TieMaps(SharedVocabMap.build(vocab, vocab), SharedVocabMap.build(vocab, vocab))
        # the frozen sides see the penalty numerically but not through backprop
        # (stop-gradient), so they are probed on the lambda=0 objective instead
        frozen = {id(cap.out_proj.W), id(ae.out_proj.W)}
        params = [p for m in (cap, mt, ae) for p in m.parameters() if id(p) not in frozen]
        err = finite_diff_check(lambda: joint_loss(cap, mt, ae, cap_b, mt_b, ae_b, 1.0, ties).loss,
                                params, coords=24, rng=fd_rng)
        err0 = finite_diff_check(lambda: joint_loss(cap, mt, ae, cap_b, mt_b, ae_b, 0.0, ties).loss,
                                 [cap.out_proj.W, ae.out_proj.W], coords=24, rng=fd_rng)
        return max(err, err0)

    return {
        "linear": linear, "embedding": embedding, "lstm_cell": lstm, "bilstm": bilstm,
        "attention": attention, "captioner_forward": captioner, "translator_forward": translator,
        "autoencoder_forward": autoencoder, "xe_loss": xe, "reg_pivot": reg("A"), "reg_target": reg("B"),
        "joint_loss": joint,
    }


def run_all(seed: int = 0) -> list[SuiteResult]:
    out = []
    for name, fn in suites(seed).items():
        t = time.perf_counter()
        err = fn()
        out.append(SuiteResult(name, err, time.perf_counter() - t))
    return out
