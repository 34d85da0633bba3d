"""Neural building blocks on top of :mod:`pivotcap.autodiff`."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Rng


class Module:
    """Parameter container; parameters and submodules are found by attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + key + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def glorot(rng: Rng, fan_out: int, fan_in: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, (fan_out, fan_in))


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: Rng):
        self.W = ad.parameter(glorot(rng.derive("W"), n_out, n_in))
        self.b = ad.parameter(np.zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.W, self.b)


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: Rng, scale: float = 0.1):
        self.E = ad.parameter(rng.uniform(-scale, scale, (vocab_size, dim)))

    def __call__(self, ids) -> Tensor:
        return ad.embedding_lookup(self.E, ids)


class LSTMCell(Module):
    """Single-layer LSTM cell with all four gates in one weight matrix."""

    def __init__(self, n_in: int, hidden: int, rng: Rng, forget_bias: float = 1.0):
        self.hidden = hidden
        self.n_in = n_in
        s = np.sqrt(6.0 / (n_in + 2 * hidden))
        self.W = ad.parameter(rng.uniform(-s, s, (4 * hidden, n_in + hidden)))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = ad.parameter(b)

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        return Tensor(np.zeros((batch, self.hidden))), Tensor(np.zeros((batch, self.hidden)))

    def __call__(self, x: Tensor, h: Tensor, c: Tensor, mask=None) -> tuple[Tensor, Tensor]:
        return ad.lstm_cell(x, h, c, self.W, self.b, mask)


def lstm_step(cell: LSTMCell, x: Tensor, h: Tensor, c: Tensor, mask=None) -> tuple[Tensor, Tensor]:
    """One recurrence step ``(h', c') = LSTM(x, h, c)``; 1-D inputs are treated as a batch of one."""
    squeeze = x.data.ndim == 1
    if squeeze:
        x, h, c = (ad.reshape(t, (1, -1)) for t in (x, h, c))
    if x.shape[1] != cell.n_in or h.shape[1] != cell.hidden or c.shape[1] != cell.hidden:
        raise ValueError(f"lstm_step: x {x.shape}, h {h.shape}, c {c.shape} vs cell "
                         f"(in={cell.n_in}, hidden={cell.hidden})")
    h2, c2 = cell(x, h, c, mask)
    if squeeze:
        h2, c2 = ad.reshape(h2, (-1,)), ad.reshape(c2, (-1,))
    return h2, c2


class BiLSTM(Module):
    """Bidirectional encoder; annotation j is ``[forward_j; backward_j]``."""

    def __init__(self, n_in: int, hidden: int, rng: Rng):
        self.fwd = LSTMCell(n_in, hidden, rng.derive("fwd"))
        self.bwd = LSTMCell(n_in, hidden, rng.derive("bwd"))

    def __call__(self, steps: list[Tensor], mask: np.ndarray):
        """Encode ``steps`` (one ``[B, d]`` tensor per position) under ``mask[B, M]``.

        Returns ``(annotations[B, M, 2H], (h_fwd, c_fwd), (h_bwd, c_bwd))`` where the
        final states are taken after the last unmasked token in each direction.
        """
        M = len(steps)
        if M == 0:
            raise ValueError("bilstm_encode: empty sequence")
        batch = steps[0].shape[0]
        mask = np.asarray(mask, dtype=bool)
        h, c = self.fwd.zero_state(batch)
        fwd_states = []
        for j in range(M):
            h, c = self.fwd(steps[j], h, c, mask[:, j])
            fwd_states.append(h)
        final_fwd = (h, c)
        h, c = self.bwd.zero_state(batch)
        bwd_states = [None] * M
        for j in reversed(range(M)):
            h, c = self.bwd(steps[j], h, c, mask[:, j])
            bwd_states[j] = h
        final_bwd = (h, c)
        ann = ad.concat([ad.stack(fwd_states, axis=1), ad.stack(bwd_states, axis=1)], axis=2)
        return ann, final_fwd, final_bwd


def bilstm_encode(enc: BiLSTM, embedded: Tensor, mask=None) -> Tensor:
    """Annotations ``[M, 2H]`` for one embedded sequence ``[M, d]`` (or ``[B, M, 2H]`` for 3-D input)."""
    single = embedded.data.ndim == 2
    if single:
        embedded = ad.reshape(embedded, (1,) + embedded.shape)
    B, M = embedded.shape[:2]
    if M == 0:
        raise ValueError("bilstm_encode: empty sequence")
    if mask is None:
        mask = np.ones((B, M), dtype=bool)
    steps = [ad.getitem(embedded, (slice(None), j)) for j in range(M)]
    ann, _, _ = enc(steps, mask)
    if single:
        ann = ad.reshape(ann, ann.shape[1:])
    return ann


class Attention(Module):
    """Additive attention ``e_j = v . tanh(W_s s + W_h a_j)``."""

    def __init__(self, query_dim: int, ann_dim: int, align_dim: int, rng: Rng):
        if align_dim < 1:
            raise ValueError("alignment dimension must be >= 1")
        self.W_s = ad.parameter(glorot(rng.derive("W_s"), align_dim, query_dim))
        self.W_h = ad.parameter(glorot(rng.derive("W_h"), align_dim, ann_dim))
        self.v = ad.parameter(rng.derive("v").uniform(-0.1, 0.1, (align_dim,)))

    def project_annotations(self, ann: Tensor) -> Tensor:
        B, M, K = ann.shape
        flat = ad.reshape(ann, (B * M, K))
        return ad.reshape(ad.linear(flat, self.W_h), (B, M, -1))

    def __call__(self, s: Tensor, ann: Tensor, keys: Tensor, mask) -> tuple[Tensor, Tensor]:
        return ad.additive_attention(ad.linear(s, self.W_s), keys, self.v, ann, mask)


def attend(att: Attention, s: Tensor, ann: Tensor, mask) -> tuple[Tensor, Tensor]:
    """Single-query attention: ``s[H]``, ``ann[M, 2H]``, ``mask[M]`` -> ``(context[2H], weights[M])``."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("attend: all positions masked")
    s2 = ad.reshape(s, (1, -1))
    ann3 = ad.reshape(ann, (1,) + ann.shape)
    ctx, w = att(s2, ann3, att.project_annotations(ann3), mask[None, :])
    return ad.reshape(ctx, (-1,)), ad.reshape(w, (-1,))
