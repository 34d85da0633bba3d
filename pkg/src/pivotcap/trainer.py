"""Two-phase training: independent pretraining, then joint optimisation; pipeline evaluation.

All randomness is a pure function of ``(seed, labels, counter)``: the shuffle of
epoch ``e`` and the dropout masks of step ``s`` are derived on demand, so a
run's full state is the parameters, the Adam moments and a few counters.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape
from .decode import CAPTIONER_BEAM, TRANSLATOR_BEAM, BeamConfig, DegenerateCaptionError, two_stage_caption
from .metrics import cider, corpus_bleu, self_bleu
from .models import Autoencoder, Captioner, Dims, Dropout, Translator
from .objectives import (CaptionBatch, ParallelBatch, SharedVocabMap, TieMaps, autoencoder_loss,
                         captioner_loss, joint_loss, tie_distances, translator_loss)
from .optim import Adam
from .rng import Rng
from .synth import Corpora, EvalSet
from .vocab import TokenSeq, Vocab, make_batch

PHASES = ("pretrain-captioner", "pretrain-translator", "pretrain-autoencoder", "joint")
KINDS = {"captioner": "pretrain-captioner", "translator": "pretrain-translator",
         "autoencoder": "pretrain-autoencoder"}


class TrainingDiverged(FloatingPointError):
    """A non-finite loss or gradient; the model holds the last good parameters."""

    def __init__(self, msg: str, log: "TrainLog"):
        super().__init__(msg)
        self.log = log


@dataclass
class TrainPlan:
    phase: str
    epochs: int = 20
    batch_size: int = 100
    lr: float = 4e-4
    lam: float = 1.0
    patience: int = 5
    seed: int = 0
    dropout: float = 0.0
    weight_decay: float = 0.0
    clip_norm: float = 5.0
    use_target_reg: bool = True
    max_steps: int | None = None   # hard cap on optimiser steps (testing / budgets)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}; expected one of {PHASES}")
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ValueError("epochs, batch_size and patience must be positive")
        if self.lr < 0 or self.lam < 0 or self.weight_decay < 0:
            raise ValueError("lr, lambda and weight_decay must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")


@dataclass
class TrainLog:
    """Append-only run record; ``lines()`` is the reproducible serialisation."""

    config_hash: str = ""
    seed: int = 0
    records: list[dict] = field(default_factory=list)
    wall: list[float] = field(default_factory=list)   # kept apart: never byte-stable

    def append(self, record: dict, seconds: float | None = None) -> None:
        self.records.append(record)
        if seconds is not None:
            self.wall.append(seconds)

    def of(self, kind: str) -> list[dict]:
        return [r for r in self.records if r.get("kind") == kind]

    def lines(self) -> list[str]:
        head = {"kind": "header", "config_hash": self.config_hash, "seed": self.seed}
        return [json.dumps(r, sort_keys=True) for r in [head, *self.records]]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())


# -- encoded datasets ------------------------------------------------------------

@dataclass
class Dataset:
    """Encoded training material for the three models."""

    vocabs: dict[str, Vocab]
    cap_feats: np.ndarray
    cap_seqs: list[TokenSeq]
    cap_val_feats: np.ndarray
    cap_val_seqs: list[TokenSeq]
    src: list[TokenSeq]
    tgt: list[TokenSeq]
    src_val: list[TokenSeq]
    tgt_val: list[TokenSeq]
    ae: list[TokenSeq]
    ae_val: list[TokenSeq]
    eval: EvalSet

    @classmethod
    def encode(cls, corpora: Corpora, vocabs: dict[str, Vocab]) -> "Dataset":
        def enc(sents, v):
            return [TokenSeq.from_tokens(s, v) for s in sents]
        return cls(vocabs,
                   corpora.caption.feats, enc(corpora.caption.sentences, vocabs["caption"]),
                   corpora.caption_val.feats, enc(corpora.caption_val.sentences, vocabs["caption"]),
                   enc(corpora.parallel.src, vocabs["src"]), enc(corpora.parallel.tgt, vocabs["tgt"]),
                   enc(corpora.parallel_val.src, vocabs["src"]), enc(corpora.parallel_val.tgt, vocabs["tgt"]),
                   enc(corpora.target, vocabs["target"]), enc(corpora.target_val, vocabs["target"]),
                   corpora.eval)

    def size(self, kind: str) -> int:
        return {"captioner": len(self.cap_seqs), "translator": len(self.src), "autoencoder": len(self.ae)}[kind]

    def batch(self, kind: str, idx, val: bool = False):
        idx = [int(i) for i in idx]
        if kind == "captioner":
            feats, seqs = (self.cap_val_feats, self.cap_val_seqs) if val else (self.cap_feats, self.cap_seqs)
            return CaptionBatch(feats[idx], make_batch([seqs[i] for i in idx]))
        if kind == "translator":
            src, tgt = (self.src_val, self.tgt_val) if val else (self.src, self.tgt)
            return ParallelBatch(make_batch([src[i] for i in idx]), make_batch([tgt[i] for i in idx]))
        if kind == "autoencoder":
            seqs = self.ae_val if val else self.ae
            return make_batch([seqs[i] for i in idx])
        raise ValueError(f"unknown model kind {kind!r}")

    def val_size(self, kind: str) -> int:
        return {"captioner": len(self.cap_val_seqs), "translator": len(self.src_val),
                "autoencoder": len(self.ae_val)}[kind]

    def tie_maps(self, pivot_site: str = "output", target_site: str = "output") -> TieMaps:
        return TieMaps(SharedVocabMap.build(self.vocabs["caption"], self.vocabs["src"]),
                       SharedVocabMap.build(self.vocabs["tgt"], self.vocabs["target"]),
                       pivot_site, target_site)


def build_models(vocabs: dict[str, Vocab], dims: Dims, seed: int) -> tuple[Captioner, Translator, Autoencoder]:
    root = Rng(seed, "init")
    return (Captioner(len(vocabs["caption"]), dims, root.derive("captioner")),
            Translator(len(vocabs["src"]), len(vocabs["tgt"]), dims, root.derive("translator")),
            Autoencoder(len(vocabs["target"]), dims, root.derive("autoencoder")))


def kind_loss(kind: str, model, batch, drop: Dropout | None = None):
    fn = {"captioner": captioner_loss, "translator": translator_loss, "autoencoder": autoencoder_loss}[kind]
    return fn(model, batch, drop)


def _tokens(kind: str, batch) -> int:
    b = batch.seqs if kind == "captioner" else batch.tgt if kind == "translator" else batch
    return int(b.mask.sum())


class CyclicBatches:
    """Epoch-wise seeded shuffles; ``indices(step)`` is stateless in ``step``."""

    def __init__(self, rng: Rng, n: int, batch_size: int):
        if n < 1:
            raise ValueError("cannot iterate over an empty corpus")
        self.rng, self.n, self.batch_size = rng, n, batch_size
        self.per_epoch = math.ceil(n / batch_size)
        self._cache: tuple[int, np.ndarray] | None = None

    def indices(self, step: int) -> np.ndarray:
        epoch, k = divmod(step, self.per_epoch)
        if self._cache is None or self._cache[0] != epoch:
            self._cache = (epoch, self.rng.derive("epoch", epoch).permutation(self.n))
        return self._cache[1][k * self.batch_size:(k + 1) * self.batch_size]


def validation_xe(kind: str, model, data: Dataset, batch_size: int = 100) -> float:
    """Token-weighted mean XE over the validation split (no dropout)."""
    n = data.val_size(kind)
    total = count = 0.0
    for lo in range(0, n, batch_size):
        b = data.batch(kind, range(lo, min(n, lo + batch_size)), val=True)
        k = _tokens(kind, b)
        total += kind_loss(kind, model, b).item() * k
        count += k
    return total / count


def snapshot(params: dict) -> dict[str, np.ndarray]:
    return {k: p.data.copy() for k, p in params.items()}


def restore(params: dict, snap: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.data = snap[k].copy()


def named_params(**models) -> dict:
    out = {}
    for prefix, m in models.items():
        for name, p in m.named_parameters():
            out[f"{prefix}.{name}"] = p
    return out


# -- pretraining -----------------------------------------------------------------

def pretrain(kind: str, model, data: Dataset, plan: TrainPlan, config_hash: str = "") -> TrainLog:
    """Adam/XE training; leaves ``model`` at its best-validation epoch."""
    if KINDS.get(kind) != plan.phase:
        raise ValueError(f"plan phase {plan.phase!r} does not match model kind {kind!r}")
    if data.size(kind) == 0:
        raise ValueError(f"empty {kind} corpus")
    params = dict(model.named_parameters())
    opt = Adam(params, lr=plan.lr, weight_decay=plan.weight_decay, clip_norm=plan.clip_norm)
    rng = Rng(plan.seed, "pretrain", kind)
    batches = CyclicBatches(rng.derive("shuffle"), data.size(kind), plan.batch_size)
    log = TrainLog(config_hash, plan.seed)
    best, best_val, bad = snapshot(params), validation_xe(kind, model, data), 0
    log.append({"kind": "epoch", "epoch": 0, "val_xe": best_val})
    step = 0
    for epoch in range(1, plan.epochs + 1):
        for _ in range(batches.per_epoch):
            if plan.max_steps is not None and step >= plan.max_steps:
                break
            b = data.batch(kind, batches.indices(step))
            drop = Dropout(plan.dropout, rng.derive("dropout", step)) if plan.dropout else None
            try:
                with Tape() as tape:
                    loss = kind_loss(kind, model, b, drop)
                if not np.isfinite(loss.item()):
                    raise FloatingPointError(f"non-finite {kind} loss at step {step}")
                tape.backward(loss)
                norm = opt.step()
            except FloatingPointError as exc:
                restore(params, best)
                raise TrainingDiverged(str(exc), log) from exc
            opt.zero_grad()
            step += 1
            log.append({"kind": "step", "step": step, "xe": loss.item(), "grad_norm": norm})
        val = validation_xe(kind, model, data)
        log.append({"kind": "epoch", "epoch": epoch, "val_xe": val})
        if val < best_val:
            best, best_val, bad = snapshot(params), val, 0
        else:
            bad += 1
        if bad >= plan.patience or (plan.max_steps is not None and step >= plan.max_steps):
            break
    restore(params, best)
    log.append({"kind": "best", "val_xe": best_val})
    return log


# -- joint training --------------------------------------------------------------

class JointTrainer:
    """Resumable joint optimisation of captioner, translator and autoencoder.

    One joint epoch is one pass over the largest corpus; the other two cycle.
    Early stopping watches the sum of the three validation XE terms.
    """

    MODELS = ("captioner", "translator", "autoencoder")

    def __init__(self, cap: Captioner, mt: Translator, ae: Autoencoder, data: Dataset,
                 ties: TieMaps, plan: TrainPlan, config_hash: str = ""):
        if plan.phase != "joint":
            raise ValueError(f"joint training needs a 'joint' plan, got {plan.phase!r}")
        self.cap, self.mt, self.ae = cap, mt, ae
        self.data, self.ties, self.plan = data, ties, plan
        self.params = named_params(cap=cap, mt=mt, ae=ae)
        self.opt = Adam(self.params, lr=plan.lr, weight_decay=plan.weight_decay, clip_norm=plan.clip_norm)
        rng = Rng(plan.seed, "joint")
        self.rng = rng
        self.iters = {k: CyclicBatches(rng.derive("shuffle", k), data.size(k), plan.batch_size)
                      for k in self.MODELS}
        self.per_epoch = max(it.per_epoch for it in self.iters.values())
        self.log = TrainLog(config_hash, plan.seed)
        self.step = 0
        self.epoch = 0
        self.bad = 0
        self.finished = False
        self.best_val = self.validate()
        self.best = snapshot(self.params)
        d_p, d_t = tie_distances(cap, mt, ae, ties)
        self.log.append({"kind": "epoch", "epoch": 0, "val_sum": self.best_val,
                         "d_pivot": d_p, "d_target": d_t})

    def validate(self) -> float:
        models = (self.cap, self.mt, self.ae)
        return sum(validation_xe(k, m, self.data) for k, m in zip(self.MODELS, models))

    def train_step(self) -> dict:
        s = self.step
        batches = [self.data.batch(k, self.iters[k].indices(s)) for k in self.MODELS]
        drops = tuple(Dropout(self.plan.dropout, self.rng.derive("dropout", s, k)) if self.plan.dropout else None
                      for k in self.MODELS)
        try:
            with Tape() as tape:
                out = joint_loss(self.cap, self.mt, self.ae, *batches, lam=self.plan.lam, ties=self.ties,
                                 use_target_reg=self.plan.use_target_reg, drops=drops)
            tape.backward(out.loss)
            norm = self.opt.step()
        except FloatingPointError as exc:
            restore(self.params, self.best)
            raise TrainingDiverged(f"step {s}: {exc}", self.log) from exc
        self.opt.zero_grad()
        self.step += 1
        rec = {"kind": "step", "step": self.step, **out.record(), "grad_norm": norm}
        self.log.append(rec)
        return rec

    def end_epoch(self) -> None:
        self.epoch += 1
        val = self.validate()
        d_p, d_t = tie_distances(self.cap, self.mt, self.ae, self.ties)
        self.log.append({"kind": "epoch", "epoch": self.epoch, "val_sum": val, "d_pivot": d_p, "d_target": d_t})
        if val < self.best_val:
            self.best_val, self.best, self.bad = val, snapshot(self.params), 0
        else:
            self.bad += 1
        if self.bad >= self.plan.patience or self.epoch >= self.plan.epochs:
            self.finished = True

    def run(self, until_step: int | None = None) -> TrainLog:
        """Train until done (or until ``until_step`` optimiser steps, for checkpoint/resume)."""
        cap = self.plan.max_steps
        while not self.finished:
            if until_step is not None and self.step >= until_step:
                return self.log
            if cap is not None and self.step >= cap:
                break
            self.train_step()
            if self.step % self.per_epoch == 0:
                self.end_epoch()
        self.finish()
        return self.log

    def finish(self) -> None:
        if not self.finished and self.step % self.per_epoch:
            self.end_epoch()
        self.finished = True
        if not any(r["kind"] == "best" for r in self.log.records):
            restore(self.params, self.best)
            d_p, d_t = tie_distances(self.cap, self.mt, self.ae, self.ties)
            self.log.append({"kind": "best", "val_sum": self.best_val, "d_pivot": d_p, "d_target": d_t})

    # state for checkpoint/resume
    def state(self) -> tuple[dict[str, np.ndarray], dict]:
        arrays = {f"param.{k}": p.data for k, p in self.params.items()}
        arrays.update({f"best.{k}": v for k, v in self.best.items()})
        for k in self.params:
            if k in self.opt.state.m:
                arrays[f"adam_m.{k}"] = self.opt.state.m[k]
                arrays[f"adam_v.{k}"] = self.opt.state.v[k]
        meta = {"step": self.step, "epoch": self.epoch, "bad": self.bad, "best_val": self.best_val,
                "adam_t": self.opt.state.t, "finished": int(self.finished),
                "log": [json.dumps(r, sort_keys=True) for r in self.log.records]}
        return arrays, meta

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        for k, p in self.params.items():
            p.data = np.array(arrays[f"param.{k}"], dtype=np.float64)
            self.best[k] = np.array(arrays[f"best.{k}"], dtype=np.float64)
            if f"adam_m.{k}" in arrays:
                self.opt.state.m[k] = np.array(arrays[f"adam_m.{k}"], dtype=np.float64)
                self.opt.state.v[k] = np.array(arrays[f"adam_v.{k}"], dtype=np.float64)
        self.step, self.epoch, self.bad = int(meta["step"]), int(meta["epoch"]), int(meta["bad"])
        self.best_val = float(meta["best_val"])
        self.opt.state.t = int(meta["adam_t"])
        self.finished = bool(int(meta["finished"]))
        self.log.records = [json.loads(r) for r in meta["log"]]


def joint_train(cap, mt, ae, data: Dataset, ties: TieMaps, plan: TrainPlan, config_hash: str = "") -> TrainLog:
    return JointTrainer(cap, mt, ae, data, ties, plan, config_hash).run()


# -- evaluation ------------------------------------------------------------------

@dataclass
class MetricReport:
    label: str
    bleu: list[float]
    cider: float
    self_bleu: dict[int, float]
    n_items: int
    n_degenerate: int
    n_truncated: int
    samples: list[dict]

    def row(self) -> dict:
        d = asdict(self)
        d["self_bleu"] = {str(k): v for k, v in self.self_bleu.items()}
        return d


def evaluate_pipeline(cap: Captioner, mt: Translator, vocabs: dict[str, Vocab], eval_set: EvalSet,
                      cfg1: BeamConfig = CAPTIONER_BEAM, cfg2: BeamConfig = TRANSLATOR_BEAM,
                      label: str = "", n_samples: int = 5, self_bleu_order: int = 5) -> MetricReport:
    """Two-stage captioning of every eval feature, scored against the target references."""
    n = len(eval_set.scenes)
    if n == 0:
        raise ValueError("empty evaluation set")
    cands, samples = [], []
    degenerate = truncated = 0
    for i in range(n):
        try:
            out = two_stage_caption(cap, mt, eval_set.feats[i], vocabs["caption"], vocabs["src"], cfg1, cfg2)
        except DegenerateCaptionError:
            degenerate += 1
            cands.append([])
            continue
        words = vocabs["tgt"].decode(out.target.ids)
        truncated += int(out.target.ids[-1] != 2)
        cands.append(words)
        if len(samples) < n_samples:
            samples.append({"scene": int(eval_set.scenes[i]),
                            "pivot": " ".join(vocabs["caption"].decode(out.pivot.ids)),
                            "caption": " ".join(words),
                            "reference": " ".join(eval_set.refs[i][0])})
    bleu = corpus_bleu(cands, eval_set.refs)
    score = cider(cands, eval_set.refs) if n >= 2 else 0.0
    sb = self_bleu(cands, self_bleu_order) if n >= 2 else {}
    return MetricReport(label, bleu, score, sb, n, degenerate, truncated, samples)
