"""Training objectives: cross-entropy terms, embedding-alignment penalties, joint loss.

Everything is in minimisation form.  The alignment penalties are sums of
(smoothed) l2 distances between rows of two embedding matrices for tokens both
vocabularies share; the gradient only reaches the trainable side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .models import Autoencoder, Captioner, Dropout, Translator
from .vocab import Batch, SPECIALS, Vocab

REG_EPS = 1e-12


@dataclass(frozen=True)
class SharedVocabMap:
    """Row pairs ``(rows_a[k], rows_b[k])`` for tokens present in both vocabularies."""

    rows_a: np.ndarray
    rows_b: np.ndarray
    tokens: tuple[str, ...]

    @classmethod
    def build(cls, vocab_a: Vocab, vocab_b: Vocab, include_specials: bool = False) -> "SharedVocabMap":
        tokens = [t for t in vocab_a.itos if t in vocab_b.stoi
                  and (include_specials or t not in SPECIALS)]
        return cls(np.array([vocab_a.stoi[t] for t in tokens], dtype=np.int64),
                   np.array([vocab_b.stoi[t] for t in tokens], dtype=np.int64),
                   tuple(tokens))

    def __len__(self) -> int:
        return len(self.tokens)

    def validate(self, A: Tensor, B: Tensor) -> None:
        if len(set(self.rows_a.tolist())) != len(self) or len(set(self.rows_b.tolist())) != len(self):
            raise ValueError("shared vocab map has repeated rows")
        if len(self) and (self.rows_a.max() >= A.shape[0] or self.rows_b.max() >= B.shape[0]
                          or min(self.rows_a.min(), self.rows_b.min()) < 0):
            raise IndexError(f"shared vocab map index out of range for {A.shape} / {B.shape}")


def xe_loss(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood (nats/token) over unmasked positions."""
    return ad.cross_entropy(logits, np.asarray(targets).reshape(-1),
                            None if mask is None else np.asarray(mask).reshape(-1))


def embed_align_reg(A: Tensor, B: Tensor, shared: SharedVocabMap, eps: float = REG_EPS,
                    trainable: str = "A") -> Tensor:
    """``sum sqrt(||A_row - B_row||^2 + eps)`` over shared rows.

    The side not named by ``trainable`` is detached, so it receives no gradient.
    """
    if trainable not in ("A", "B"):
        raise ValueError("trainable must be 'A' or 'B'")
    shared.validate(A, B)
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"embedding widths differ: {A.shape} vs {B.shape}")
    if trainable == "A":
        B = ad.detach(B)
    else:
        A = ad.detach(A)
    return ad.row_l2_sum(A, B, shared.rows_a, shared.rows_b, eps)


# -- tie sites -------------------------------------------------------------------

def pivot_tie(cap: Captioner, mt: Translator, site: str = "output") -> tuple[Tensor, Tensor]:
    """(frozen captioner pivot embeddings, trainable translator encoder embeddings)."""
    frozen = {"output": cap.out_proj.W, "input": cap.in_emb.E}[site]
    return frozen, mt.enc_emb.E


def target_tie(mt: Translator, ae: Autoencoder, site: str = "output") -> tuple[Tensor, Tensor]:
    """(trainable translator decoder embeddings, frozen autoencoder embeddings)."""
    if site == "output":
        return mt.out_proj.W, ae.out_proj.W
    if site == "input":
        return mt.dec_in_emb.E, ae.emb.E
    raise ValueError(f"unknown tie site {site!r}")


@dataclass
class TieMaps:
    pivot: SharedVocabMap    # captioner vocab rows <-> translator source rows
    target: SharedVocabMap   # translator target rows <-> autoencoder rows
    pivot_site: str = "output"
    target_site: str = "output"


def regularizers(cap: Captioner, mt: Translator, ae: Autoencoder, ties: TieMaps) -> tuple[Tensor, Tensor]:
    frozen_cap, mt_src = pivot_tie(cap, mt, ties.pivot_site)
    mt_tgt, frozen_ae = target_tie(mt, ae, ties.target_site)
    r_pivot = embed_align_reg(mt_src, frozen_cap, _swap(ties.pivot), trainable="A")
    r_target = embed_align_reg(mt_tgt, frozen_ae, ties.target, trainable="A")
    return r_pivot, r_target


def _swap(m: SharedVocabMap) -> SharedVocabMap:
    return SharedVocabMap(m.rows_b, m.rows_a, m.tokens)


def mean_row_distance(A: Tensor, B: Tensor, shared: SharedVocabMap) -> float:
    if not len(shared):
        return 0.0
    diff = A.data[shared.rows_a] - B.data[shared.rows_b]
    return float(np.sqrt((diff * diff).sum(axis=1)).mean())


def tie_distances(cap: Captioner, mt: Translator, ae: Autoencoder, ties: TieMaps) -> tuple[float, float]:
    """Mean l2 distance over shared rows for the pivot and target ties."""
    frozen_cap, mt_src = pivot_tie(cap, mt, ties.pivot_site)
    mt_tgt, frozen_ae = target_tie(mt, ae, ties.target_site)
    return (mean_row_distance(mt_src, frozen_cap, _swap(ties.pivot)),
            mean_row_distance(mt_tgt, frozen_ae, ties.target))


# -- batches and breakdown -------------------------------------------------------

@dataclass
class CaptionBatch:
    feats: np.ndarray
    seqs: Batch


@dataclass
class ParallelBatch:
    src: Batch
    tgt: Batch


@dataclass
class JointLossBreakdown:
    l_ix: float
    l_xy: float
    l_yy: float
    r_pivot: float
    r_target: float
    lam: float
    total: float
    use_target_reg: bool = True
    loss: Tensor | None = None  # differentiable total

    @property
    def xe_sum(self) -> float:
        return self.l_ix + self.l_xy + self.l_yy

    def record(self) -> dict:
        return {"l_ix": self.l_ix, "l_xy": self.l_xy, "l_yy": self.l_yy,
                "r_pivot": self.r_pivot, "r_target": self.r_target, "total": self.total}


def captioner_loss(cap: Captioner, b: CaptionBatch, drop: Dropout | None = None) -> Tensor:
    return xe_loss(cap.forward(b.feats, b.seqs, drop), b.seqs.targets, b.seqs.mask)


def translator_loss(mt: Translator, b: ParallelBatch, drop: Dropout | None = None) -> Tensor:
    return xe_loss(mt.forward(b.src, b.tgt, drop), b.tgt.targets, b.tgt.mask)


def autoencoder_loss(ae: Autoencoder, b: Batch, drop: Dropout | None = None) -> Tensor:
    return xe_loss(ae.forward(b, drop), b.targets, b.mask)


def joint_loss(cap: Captioner, mt: Translator, ae: Autoencoder,
               cap_batch: CaptionBatch, mt_batch: ParallelBatch, ae_batch: Batch,
               lam: float, ties: TieMaps, use_target_reg: bool = True,
               drops: tuple[Dropout | None, Dropout | None, Dropout | None] = (None, None, None),
               ) -> JointLossBreakdown:
    """Sum of the three cross-entropies plus ``lam`` times the active penalties.

    With ``use_target_reg=False`` only the pivot-side penalty enters the total;
    ``r_target`` is still measured and reported.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    l_ix = captioner_loss(cap, cap_batch, drops[0])
    l_xy = translator_loss(mt, mt_batch, drops[1])
    l_yy = autoencoder_loss(ae, ae_batch, drops[2])
    r_pivot, r_target = regularizers(cap, mt, ae, ties)
    total = ad.add(ad.add(l_ix, l_xy), l_yy)
    reg = ad.add(r_pivot, r_target) if use_target_reg else r_pivot
    if lam != 0.0:
        total = ad.add(total, ad.scale(reg, lam))
    parts = [t.item() for t in (l_ix, l_xy, l_yy, r_pivot, r_target)]
    if not np.all(np.isfinite(parts + [total.item()])):
        raise FloatingPointError(f"non-finite joint loss component: {parts}")
    return JointLossBreakdown(*parts, lam=lam, total=total.item(),
                              use_target_reg=use_target_reg, loss=total)


def pipeline_loss(cap: Captioner, mt: Translator, cap_batch: CaptionBatch, mt_batch: ParallelBatch) -> Tensor:
    """Captioner XE plus translator XE, each trained on its own corpus."""
    return ad.add(captioner_loss(cap, cap_batch), translator_loss(mt, mt_batch))
