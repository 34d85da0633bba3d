"""End-to-end desk-scale study: pretrain once, then compare joint-training variants.

Variants share the same pretrained starting point:

* ``lower``: pretrained captioner + translator, no joint phase;
* ``pivot``: joint phase with only the pivot-side penalty;
* ``full``: joint phase with both penalties;
* ``lam0``: joint phase with lambda = 0 (control for the penalty effect).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

from .config import Config
from .synth import corpus_vocabs, gen_corpora
from .trainer import (Dataset, JointTrainer, MetricReport, TrainLog, build_models, evaluate_pipeline,
                      pretrain)

VARIANTS = {
    "pivot": {"use_target_reg": False},
    "full": {"use_target_reg": True},
    "lam0": {"lam": 0.0},
}


@dataclass
class VariantResult:
    report: MetricReport
    log: TrainLog | None = None
    d_start: tuple[float, float] | None = None
    d_end: tuple[float, float] | None = None
    seconds: float = 0.0


@dataclass
class SeedResult:
    seed: int
    results: dict[str, VariantResult] = field(default_factory=dict)
    pretrain_logs: dict[str, TrainLog] = field(default_factory=dict)
    seconds: float = 0.0
    shared_seconds: float = 0.0   # data generation, pretraining and the lower-bound evaluation

    def cost(self, variants) -> float:
        """Wall time attributable to the given variants plus the shared work."""
        return self.shared_seconds + sum(self.results[v].seconds for v in variants if v in self.results)


def prepare(cfg: Config):
    corpora = gen_corpora(cfg.world(), cfg.seed)
    vocabs = corpus_vocabs(corpora, cfg.min_freq)
    return Dataset.encode(corpora, vocabs)


def pretrain_all(cfg: Config, data: Dataset):
    cap, mt, ae = build_models(data.vocabs, cfg.dims(), cfg.seed)
    logs = {}
    for kind, model in (("captioner", cap), ("translator", mt), ("autoencoder", ae)):
        logs[kind] = pretrain(kind, model, data, cfg.pretrain_plan(kind), cfg.config_hash())
    return (cap, mt, ae), logs


def run_seed(cfg: Config, variants=("pivot", "full"), evaluate: bool = True) -> SeedResult:
    t0 = time.perf_counter()
    data = prepare(cfg)
    models, logs = pretrain_all(cfg, data)
    beams = cfg.beams()
    out = SeedResult(cfg.seed, pretrain_logs=logs)
    if evaluate:
        out.results["lower"] = VariantResult(evaluate_pipeline(models[0], models[1], data.vocabs, data.eval,
                                                               *beams, label="lower"))
    out.shared_seconds = time.perf_counter() - t0
    ties = data.tie_maps(cfg.pivot_site, cfg.target_site)
    for name in variants:
        t1 = time.perf_counter()
        cap, mt, ae = copy.deepcopy(models)
        trainer = JointTrainer(cap, mt, ae, data, ties, cfg.joint_plan(**VARIANTS[name]), cfg.config_hash())
        log = trainer.run()
        epochs = log.of("epoch")
        best = log.of("best")[-1]
        report = (evaluate_pipeline(cap, mt, data.vocabs, data.eval, *beams, label=name)
                  if evaluate else None)
        out.results[name] = VariantResult(report, log, (epochs[0]["d_pivot"], epochs[0]["d_target"]),
                                          (best["d_pivot"], best["d_target"]), time.perf_counter() - t1)
    out.seconds = time.perf_counter() - t0
    return out
