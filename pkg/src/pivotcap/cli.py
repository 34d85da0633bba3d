"""``pivotcap`` command line: gen-data | pretrain | joint-train | caption | evaluate | gradcheck.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import formats as fm
from .config import Config, load_config
from .decode import DegenerateCaptionError, two_stage_caption
from .experiment import VARIANTS
from .synth import (CaptionSet, Corpora, EvalSet, ParallelSet, corpus_vocabs, gen_corpora)
from .trainer import (Dataset, JointTrainer, TrainingDiverged, build_models, evaluate_pipeline, pretrain)

MODEL_PREFIX = {"captioner": "cap", "translator": "mt", "autoencoder": "ae"}
VOCABS = ("caption", "src", "tgt", "target")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- data directory ----------------------------------------------------------------

def write_corpora(data_dir: Path, corpora: Corpora, vocabs) -> None:
    for name, cs in (("caption", corpora.caption), ("caption_val", corpora.caption_val)):
        fm.write_corpus(data_dir / f"{name}.txt", cs.sentences)
        fm.write_features(data_dir / f"{name}.feat", cs.feats)
        fm.write_index(data_dir / f"{name}.index", cs.scenes)
    fm.write_parallel(data_dir / "parallel", corpora.parallel.src, corpora.parallel.tgt)
    fm.write_parallel(data_dir / "parallel_val", corpora.parallel_val.src, corpora.parallel_val.tgt)
    fm.write_corpus(data_dir / "target.txt", corpora.target)
    fm.write_corpus(data_dir / "target_val.txt", corpora.target_val)
    fm.write_features(data_dir / "eval.feat", corpora.eval.feats)
    fm.write_index(data_dir / "eval.index", corpora.eval.scenes)
    fm.write_refs(data_dir / "eval", corpora.eval.refs)
    for name in VOCABS:
        fm.write_vocab(data_dir / f"{name}.vocab", vocabs[name])


def read_corpora(data_dir: Path, n_refs: int) -> tuple[Corpora, dict]:
    def caption_set(name):
        sents = fm.read_corpus(data_dir / f"{name}.txt")
        feats = fm.read_features(data_dir / f"{name}.feat")
        scenes = fm.read_index(data_dir / f"{name}.index")
        if not len(sents) == len(feats) == len(scenes):
            raise fm.FormatError(f"{data_dir / name}.*: {len(sents)} sentences, {len(feats)} features, "
                                 f"{len(scenes)} index rows")
        return CaptionSet(feats, scenes, sents)

    eval_feats = fm.read_features(data_dir / "eval.feat")
    eval_scenes = fm.read_index(data_dir / "eval.index")
    refs = fm.read_refs(data_dir / "eval", n_refs)
    if not len(eval_feats) == len(eval_scenes) == len(refs):
        raise fm.FormatError(f"{data_dir}/eval.*: {len(eval_feats)} features, {len(eval_scenes)} index rows, "
                             f"{len(refs)} reference rows")
    corpora = Corpora(caption_set("caption"), caption_set("caption_val"),
                      ParallelSet(*fm.read_parallel(data_dir / "parallel")),
                      ParallelSet(*fm.read_parallel(data_dir / "parallel_val")),
                      fm.read_corpus(data_dir / "target.txt"), fm.read_corpus(data_dir / "target_val.txt"),
                      EvalSet(eval_feats, eval_scenes, refs))
    vocabs = {name: fm.read_vocab(data_dir / f"{name}.vocab") for name in VOCABS}
    return corpora, vocabs


class Run:
    """Paths and shared loading logic for one output directory."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)
        self.data_dir = self.root / "data"
        self.ckpt_dir = self.root / "ckpt"
        self.log_dir = self.root / "logs"
        self.report_dir = self.root / "reports"
        self.hash = cfg.config_hash()

    def write_config(self) -> None:
        fm.write_text(self.root / "config.resolved", self.cfg.resolved_text())

    def dataset(self) -> Dataset:
        if not (self.data_dir / "caption.txt").is_file():
            raise FileNotFoundError(f"missing corpora under {self.data_dir}; run gen-data first")
        corpora, vocabs = read_corpora(self.data_dir, self.cfg.n_refs)
        return Dataset.encode(corpora, vocabs)

    def models(self, data: Dataset):
        return build_models(data.vocabs, self.cfg.dims(), self.cfg.seed)

    def write_log(self, name: str, log, seconds: float) -> None:
        fm.write_text(self.log_dir / f"{name}.jsonl", log.text())
        # wall-clock lives apart from the reproducible log
        fm.write_text(self.log_dir / f"{name}.timing", f"seconds {seconds:.3f}\n")


def _arrays(prefix: str, model) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": p.data for k, p in model.named_parameters()}


def _load_into(model, prefix: str, arrays: dict[str, np.ndarray], where: str) -> None:
    for k, p in model.named_parameters():
        key = f"{prefix}.{k}"
        if key not in arrays:
            raise fm.FormatError(f"{where}: checkpoint lacks parameter {key!r}")
        if arrays[key].shape != p.shape:
            raise fm.FormatError(f"{where}: {key!r} has shape {arrays[key].shape}, model expects {p.shape}")
        p.data = arrays[key].copy()


def load_models(run: Run, data: Dataset, stem: Path):
    ck = fm.load_checkpoint(stem, expect_hash=run.hash)
    arrays = ck.arrays
    if ck.meta.get("kind") == "joint":
        arrays = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    cap, mt, ae = run.models(data)
    _load_into(cap, "cap", arrays, str(stem))
    _load_into(mt, "mt", arrays, str(stem))
    if any(k.startswith("ae.") for k in arrays):
        _load_into(ae, "ae", arrays, str(stem))
    return cap, mt, ae


# -- subcommands ---------------------------------------------------------------------

def cmd_gen_data(run: Run, args) -> int:
    corpora = gen_corpora(run.cfg.world(), run.cfg.seed)
    vocabs = corpus_vocabs(corpora, run.cfg.min_freq)
    write_corpora(run.data_dir, corpora, vocabs)
    print(f"wrote corpora to {run.data_dir} "
          + " ".join(f"{k}_vocab={len(v)}" for k, v in vocabs.items()))
    return 0


def cmd_pretrain(run: Run, args) -> int:
    data = run.dataset()
    kinds = list(MODEL_PREFIX) if args.which == "all" else [args.which]
    models = dict(zip(MODEL_PREFIX, run.models(data)))
    for kind in kinds:
        t = time.perf_counter()
        model = models[kind]
        try:
            log = pretrain(kind, model, data, run.cfg.pretrain_plan(kind), run.hash)
        except TrainingDiverged as exc:
            run.write_log(f"pretrain-{kind}", exc.log, time.perf_counter() - t)
            fm.save_checkpoint(run.ckpt_dir / kind, _arrays(MODEL_PREFIX[kind], model),
                               {"kind": kind, "diverged": True}, run.hash)
            raise
        run.write_log(f"pretrain-{kind}", log, time.perf_counter() - t)
        steps = sum(1 for r in log.records if r["kind"] == "step")
        fm.save_checkpoint(run.ckpt_dir / kind, _arrays(MODEL_PREFIX[kind], model), {"kind": kind},
                           run.hash, step=steps)
        print(f"{kind}: best validation XE {log.of('best')[-1]['val_xe']:.4f} after {steps} steps")
    stems = [run.ckpt_dir / k for k in MODEL_PREFIX]
    if all(Path(f"{s}.manifest").is_file() for s in stems):
        arrays: dict = {}
        for s in stems:
            arrays.update(fm.load_checkpoint(s, expect_hash=run.hash).arrays)
        fm.save_checkpoint(run.ckpt_dir / "lower", arrays, {"kind": "pipeline"}, run.hash)
        print(f"lower-bound pipeline checkpoint: {run.ckpt_dir / 'lower'}")
    return 0


def cmd_joint(run: Run, args) -> int:
    data = run.dataset()
    stem = run.ckpt_dir / f"joint-{args.variant}"
    plan = run.cfg.joint_plan(**VARIANTS[args.variant])
    ties = data.tie_maps(run.cfg.pivot_site, run.cfg.target_site)
    if args.resume:
        ck = fm.load_checkpoint(stem, expect_hash=run.hash)
        cap, mt, ae = run.models(data)
        trainer = JointTrainer(cap, mt, ae, data, ties, plan, run.hash)
        trainer.load_state(ck.arrays, ck.meta)
    else:
        cap, mt, ae = load_models(run, data, run.ckpt_dir / "lower")
        trainer = JointTrainer(cap, mt, ae, data, ties, plan, run.hash)
    t = time.perf_counter()
    try:
        trainer.run(until_step=args.stop_after)
    finally:
        arrays, meta = trainer.state()
        meta.update({"kind": "joint", "variant": args.variant})
        fm.save_checkpoint(stem, arrays, meta, run.hash, step=trainer.step)
        run.write_log(f"joint-{args.variant}", trainer.log, time.perf_counter() - t)
    state = "finished" if trainer.finished else "paused (resume with --resume)"
    best = trainer.log.of("best")
    extra = f"; best validation XE sum {best[-1]['val_sum']:.4f}" if best else ""
    print(f"joint-{args.variant}: {state} at step {trainer.step}{extra}")
    return 0


def _ckpt_stem(run: Run, text: str) -> Path:
    p = Path(text)
    if p.suffix in (".manifest", ".bin"):
        p = p.with_suffix("")
    if not Path(f"{p}.manifest").is_file() and Path(f"{run.ckpt_dir / text}.manifest").is_file():
        p = run.ckpt_dir / text
    return p


def cmd_caption(run: Run, args) -> int:
    data = run.dataset()
    cap, mt, _ = load_models(run, data, _ckpt_stem(run, args.ckpt))
    n = len(data.eval.scenes)
    if args.all:
        rows = range(n)
    else:
        if not 0 <= args.feature_index < n:
            raise IndexError(f"--feature-index {args.feature_index} outside [0, {n})")
        rows = [args.feature_index]
    b1, b2 = run.cfg.beams()
    for i in rows:
        try:
            out = two_stage_caption(cap, mt, data.eval.feats[i], data.vocabs["caption"], data.vocabs["src"], b1, b2)
            words = " ".join(data.vocabs["tgt"].decode(out.target.ids))
            pivot = " ".join(data.vocabs["caption"].decode(out.pivot.ids))
        except DegenerateCaptionError:
            words, pivot = "", ""
        print(f"{i}\t{data.eval.scenes[i]}\t{pivot}\t{words}")
    return 0


def cmd_evaluate(run: Run, args) -> int:
    data = run.dataset()
    b1, b2 = run.cfg.beams()
    print(f"{'model':<16}{'B@1':>8}{'B@2':>8}{'B@3':>8}{'B@4':>8}{'CIDEr':>8}{'Self-B@5':>10}")
    for text in args.ckpt:
        stem = _ckpt_stem(run, text)
        cap, mt, _ = load_models(run, data, stem)
        rep = evaluate_pipeline(cap, mt, data.vocabs, data.eval, b1, b2, label=stem.name)
        doc = {"config_hash": run.hash, "checkpoint": stem.name, **rep.row()}
        fm.write_text(run.report_dir / f"{stem.name}.json", json.dumps(doc, sort_keys=True, indent=1) + "\n")
        b = rep.bleu
        print(f"{stem.name:<16}{b[0]:8.4f}{b[1]:8.4f}{b[2]:8.4f}{b[3]:8.4f}{rep.cider:8.4f}"
              f"{rep.self_bleu.get(5, float('nan')):10.4f}")
    return 0


def cmd_gradcheck(run: Run | None, args) -> int:
    from .gradcheck import TOLERANCE, run_all
    results = run_all(args.seed)
    for r in results:
        print(f"{'PASS' if r.ok else 'FAIL'}  {r.name:<22} max rel err {r.max_rel_err:.3e}  ({r.seconds:.1f}s)")
    bad = [r.name for r in results if not r.ok]
    if bad:
        print(f"gradcheck failed (tolerance {TOLERANCE:g}): {', '.join(bad)}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pivotcap", description="Pivot-language image captioning at desk scale.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_text, need_config=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", required=need_config, help="key = value configuration file")
        return sp

    add("gen-data", "generate the synthetic corpora and vocabularies")
    sp = add("pretrain", "pretrain captioner, translator and/or autoencoder")
    sp.add_argument("--which", required=True, choices=[*MODEL_PREFIX, "all"])
    sp = add("joint-train", "joint phase from the pretrained checkpoints")
    sp.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    sp.add_argument("--resume", action="store_true", help="continue a paused joint run")
    sp.add_argument("--stop-after", type=int, default=None, metavar="STEP",
                    help="pause (checkpoint and exit) once this many optimiser steps are done")
    sp = add("caption", "two-stage caption for evaluation features")
    sp.add_argument("--ckpt", required=True)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--feature-index", type=int)
    g.add_argument("--all", action="store_true")
    sp = add("evaluate", "BLEU / CIDEr / Self-BLEU of one or more pipeline checkpoints")
    sp.add_argument("--ckpt", required=True, nargs="+")
    sp = add("gradcheck", "finite-difference gradient suites", need_config=False)
    sp.add_argument("--seed", type=int, default=0)
    return p


COMMANDS = {"gen-data": cmd_gen_data, "pretrain": cmd_pretrain, "joint-train": cmd_joint,
            "caption": cmd_caption, "evaluate": cmd_evaluate, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        if args.command == "gradcheck" and not args.config:
            return cmd_gradcheck(None, args)
        cfg = load_config(args.config)
        run = Run(cfg)
        with fm.RunLock(run.root):
            run.write_config()
            return COMMANDS[args.command](run, args)
    except (OSError, ValueError, RuntimeError, IndexError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
