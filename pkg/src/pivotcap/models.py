"""Captioner, translator and target-side autoencoder.

Each model exposes ``start_*`` (build the decoder state), ``step`` (consume one
token per row, emit logits) and ``forward`` (teacher forcing).  ``forward`` is
literally a loop over ``step``, which is what keeps training-time logits and
decode-time logits identical.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Attention, BiLSTM, Embedding, Linear, LSTMCell, Module
from .rng import Rng
from .vocab import Batch, TokenSeq, make_batch


@dataclass(frozen=True)
class Dims:
    d: int = 64        # word embedding width
    H: int = 64        # LSTM hidden width
    A: int = 64        # attention alignment width
    D_img: int = 64    # image feature width

    @classmethod
    def full_scale(cls) -> "Dims":
        return cls(d=512, H=512, A=512, D_img=2048)


@dataclass
class Dropout:
    """Dropout setting for one forward pass; ``rng`` supplies the masks."""

    p: float
    rng: Rng

    def __call__(self, x: Tensor) -> Tensor:
        return ad.dropout(x, self.p, True, self.rng)


def _maybe(drop: Dropout | None, x: Tensor) -> Tensor:
    return x if drop is None else drop(x)


class _State:
    def select(self, rows):
        """Reorder/duplicate batch rows (beam search back-pointers)."""
        rows = np.asarray(rows, dtype=np.int64)
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if isinstance(val, Tensor):
                out[f.name] = Tensor(val.data[rows])
            elif isinstance(val, np.ndarray):
                out[f.name] = val[rows]
            else:
                out[f.name] = val
        return replace(self, **out)


@dataclass
class RNNState(_State):
    h: Tensor
    c: Tensor


@dataclass
class AttnState(_State):
    h: Tensor
    c: Tensor
    ann: Tensor
    keys: Tensor
    mask: np.ndarray


def _stack_logits(steps: list[Tensor]) -> Tensor:
    """``T`` tensors ``[B, V]`` -> ``[B*T, V]`` in row-major (batch, time) order."""
    out = ad.stack(steps, axis=1)
    B, T, V = out.shape
    return ad.reshape(out, (B * T, V))


def _check_ids(ids: np.ndarray, V: int, what: str) -> None:
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise IndexError(f"{what}: token id out of range [0, {V})")


class Captioner(Module):
    """Image feature -> pivot sentence.  The feature is fed once, before BOS."""

    def __init__(self, vocab_size: int, dims: Dims, rng: Rng):
        self.vocab_size = vocab_size
        self.img_proj = Linear(dims.D_img, dims.d, rng.derive("img_proj"))
        self.in_emb = Embedding(vocab_size, dims.d, rng.derive("in_emb"))
        self.decoder = LSTMCell(dims.d, dims.H, rng.derive("decoder"))
        self.out_proj = Linear(dims.H, vocab_size, rng.derive("out_proj"))

    def start(self, feats, drop: Dropout | None = None) -> RNNState:
        feats = feats if isinstance(feats, Tensor) else Tensor(np.atleast_2d(feats))
        h, c = self.decoder.zero_state(feats.shape[0])
        x = _maybe(drop, self.img_proj(feats))
        h, c = self.decoder(x, h, c)
        return RNNState(h, c)

    def step(self, state: RNNState, tokens, drop: Dropout | None = None):
        tokens = np.asarray(tokens, dtype=np.int64)
        x = _maybe(drop, self.in_emb(tokens))
        h, c = self.decoder(x, state.h, state.c)
        return self.out_proj(_maybe(drop, h)), RNNState(h, c)

    def forward(self, feats, batch: Batch, drop: Dropout | None = None) -> Tensor:
        """Logits ``[B*T, V]`` for ``batch.targets`` flattened row-major."""
        _check_ids(batch.inputs, self.vocab_size, "captioner")
        _check_ids(batch.targets, self.vocab_size, "captioner")
        state = self.start(feats, drop)
        steps = []
        for t in range(batch.inputs.shape[1]):
            logits, state = self.step(state, batch.inputs[:, t], drop)
            steps.append(logits)
        return _stack_logits(steps)


class Translator(Module):
    """Bidirectional-LSTM encoder, additive attention, LSTM decoder.

    The decoder input at each step is ``[embedding(y_{t-1}); context_t]`` where
    the context is computed from the previous decoder state.
    """

    def __init__(self, src_size: int, tgt_size: int, dims: Dims, rng: Rng):
        self.src_size, self.tgt_size = src_size, tgt_size
        self.enc_emb = Embedding(src_size, dims.d, rng.derive("enc_emb"))
        self.encoder = BiLSTM(dims.d, dims.H, rng.derive("encoder"))
        self.bridge = Linear(2 * dims.H, dims.H, rng.derive("bridge"))
        self.attention = Attention(dims.H, 2 * dims.H, dims.A, rng.derive("attention"))
        self.dec_in_emb = Embedding(tgt_size, dims.d, rng.derive("dec_in_emb"))
        self.decoder = LSTMCell(dims.d + 2 * dims.H, dims.H, rng.derive("decoder"))
        self.out_proj = Linear(dims.H, tgt_size, rng.derive("out_proj"))

    def start(self, words, word_mask=None) -> AttnState:
        words = np.atleast_2d(np.asarray(words, dtype=np.int64))
        if words.shape[1] == 0:
            raise ValueError("translator: empty source sentence")
        if word_mask is None:
            word_mask = np.ones(words.shape, dtype=bool)
        word_mask = np.atleast_2d(np.asarray(word_mask, dtype=bool))
        if not word_mask.any(axis=1).all():
            raise ValueError("translator: empty source sentence")
        _check_ids(words, self.src_size, "translator source")
        steps = [self.enc_emb(words[:, j]) for j in range(words.shape[1])]
        ann, (hf, _), (hb, _) = self.encoder(steps, word_mask)
        h = ad.tanh(self.bridge(ad.concat([hf, hb], axis=1)))
        c = Tensor(np.zeros(h.shape))
        keys = self.attention.project_annotations(ann)
        return AttnState(h, c, ann, keys, word_mask)

    def step(self, state: AttnState, tokens, drop: Dropout | None = None):
        tokens = np.asarray(tokens, dtype=np.int64)
        ctx, _ = self.attention(state.h, state.ann, state.keys, state.mask)
        x = ad.concat([_maybe(drop, self.dec_in_emb(tokens)), ctx], axis=1)
        h, c = self.decoder(x, state.h, state.c)
        return self.out_proj(_maybe(drop, h)), AttnState(h, c, state.ann, state.keys, state.mask)

    def attention_weights(self, state: AttnState) -> np.ndarray:
        _, w = self.attention(state.h, state.ann, state.keys, state.mask)
        return w.data

    def forward(self, src: Batch, tgt: Batch, drop: Dropout | None = None) -> Tensor:
        _check_ids(tgt.inputs, self.tgt_size, "translator target")
        _check_ids(tgt.targets, self.tgt_size, "translator target")
        state = self.start(src.words, src.word_mask)
        steps = []
        for t in range(tgt.inputs.shape[1]):
            logits, state = self.step(state, tgt.inputs[:, t], drop)
            steps.append(logits)
        return _stack_logits(steps)


class Autoencoder(Module):
    """One-layer LSTM encoder whose final state seeds a one-layer LSTM decoder."""

    def __init__(self, vocab_size: int, dims: Dims, rng: Rng):
        self.vocab_size = vocab_size
        self.emb = Embedding(vocab_size, dims.d, rng.derive("emb"))
        self.encoder = LSTMCell(dims.d, dims.H, rng.derive("encoder"))
        self.decoder = LSTMCell(dims.d, dims.H, rng.derive("decoder"))
        self.out_proj = Linear(dims.H, vocab_size, rng.derive("out_proj"))

    def start(self, words, word_mask=None) -> RNNState:
        words = np.atleast_2d(np.asarray(words, dtype=np.int64))
        if words.shape[1] == 0:
            raise ValueError("autoencoder: empty input sentence")
        if word_mask is None:
            word_mask = np.ones(words.shape, dtype=bool)
        word_mask = np.atleast_2d(np.asarray(word_mask, dtype=bool))
        _check_ids(words, self.vocab_size, "autoencoder")
        h, c = self.encoder.zero_state(words.shape[0])
        for j in range(words.shape[1]):
            h, c = self.encoder(self.emb(words[:, j]), h, c, word_mask[:, j])
        return RNNState(h, c)

    def step(self, state: RNNState, tokens, drop: Dropout | None = None):
        tokens = np.asarray(tokens, dtype=np.int64)
        x = _maybe(drop, self.emb(tokens))
        h, c = self.decoder(x, state.h, state.c)
        return self.out_proj(_maybe(drop, h)), RNNState(h, c)

    def forward(self, batch: Batch, drop: Dropout | None = None) -> Tensor:
        _check_ids(batch.inputs, self.vocab_size, "autoencoder")
        _check_ids(batch.targets, self.vocab_size, "autoencoder")
        state = self.start(batch.words, batch.word_mask)
        steps = []
        for t in range(batch.inputs.shape[1]):
            logits, state = self.step(state, batch.inputs[:, t], drop)
            steps.append(logits)
        return _stack_logits(steps)


# -- single-example conveniences ------------------------------------------------

def captioner_forward(model: Captioner, feat, x: TokenSeq) -> Tensor:
    """Logits ``[M, V]`` scoring ``x`` after BOS, given one image feature."""
    return model.forward(np.atleast_2d(feat), make_batch([x]))


def translator_forward(model: Translator, x: TokenSeq, y: TokenSeq) -> Tensor:
    if not x.words:
        raise ValueError("translator: empty source sentence")
    return model.forward(make_batch([x]), make_batch([y]))


def autoencoder_forward(model: Autoencoder, y: TokenSeq) -> Tensor:
    if not y.words:
        raise ValueError("autoencoder: empty input sentence")
    return model.forward(make_batch([y]))


class StepFn:
    """Adapter used by decoding: ``(state, tokens) -> (log-probs[B, V], state)``."""

    def __init__(self, model):
        self.model = model

    def __call__(self, state, tokens):
        if state is None:
            raise ValueError("step_fn: invalid (missing) decoder state")
        logits, state = self.model.step(state, tokens)
        return ad.log_softmax(logits).data, state


def step_fn(model) -> StepFn:
    return StepFn(model)
