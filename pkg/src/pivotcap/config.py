"""Plain-text ``key = value`` run configuration.

Every key has a default; unknown keys, duplicates and ill-typed values are
rejected with the offending line.  ``resolved_text()`` is the canonical form
(all keys, sorted) and ``config_hash()`` hashes exactly that text.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .decode import BeamConfig
from .models import Dims
from .synth import SynthWorldConfig
from .trainer import TrainPlan


@dataclass(frozen=True)
class Config:
    # world generation
    seed: int = 0
    n_subject: int = 8
    n_verb: int = 6
    n_object: int = 8
    n_setting: int = 4
    feat_dim: int = 64
    noise: float = 0.1
    n_caption: int = 2000
    n_parallel: int = 4000
    n_target: int = 1000
    n_eval: int = 200
    n_refs: int = 5
    val_fraction: float = 0.1
    min_freq: int = 5
    max_len: int = 16
    zipf: float = 1.0
    # model widths (image width is feat_dim)
    d: int = 64
    H: int = 64
    A: int = 64
    # pretraining (desk-scale preset: larger lr, smaller batches than the 4e-4 / 100 reference)
    pretrain_lr: float = 2e-3
    pretrain_batch: int = 50
    pretrain_epochs: int = 15
    pretrain_dropout: float = 0.0
    patience: int = 5
    # joint phase
    joint_lr: float = 2e-4
    joint_batch: int = 64
    joint_epochs: int = 20
    lam: float = 1.0
    dropout: float = 0.3
    weight_decay: float = 1e-5
    clip_norm: float = 5.0
    use_target_reg: bool = True
    # decoding
    k1: int = 5
    k2: int = 10
    t_max1: int = 16
    t_max2: int = 20
    # regularizer tie sites: output | input
    pivot_site: str = "output"
    target_site: str = "output"
    # outputs
    out_dir: str = "run"

    def __post_init__(self):
        for site in (self.pivot_site, self.target_site):
            if site not in ("output", "input"):
                raise ValueError(f"tie site must be 'output' or 'input', got {site!r}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")

    # -- views ---------------------------------------------------------------
    def world(self) -> SynthWorldConfig:
        return SynthWorldConfig(self.n_subject, self.n_verb, self.n_object, self.n_setting,
                                self.feat_dim, self.noise, self.n_caption, self.n_parallel,
                                self.n_target, self.n_eval, self.n_refs, self.val_fraction,
                                self.min_freq, self.max_len, self.zipf)

    def dims(self) -> Dims:
        return Dims(self.d, self.H, self.A, self.feat_dim)

    def pretrain_plan(self, kind: str) -> TrainPlan:
        return TrainPlan(f"pretrain-{kind}", epochs=self.pretrain_epochs, batch_size=self.pretrain_batch,
                         lr=self.pretrain_lr, patience=self.patience, seed=self.seed,
                         dropout=self.pretrain_dropout, clip_norm=self.clip_norm)

    def joint_plan(self, **overrides) -> TrainPlan:
        plan = TrainPlan("joint", epochs=self.joint_epochs, batch_size=self.joint_batch, lr=self.joint_lr,
                         lam=self.lam, patience=self.patience, seed=self.seed, dropout=self.dropout,
                         weight_decay=self.weight_decay, clip_norm=self.clip_norm,
                         use_target_reg=self.use_target_reg)
        return replace(plan, **overrides)

    def beams(self) -> tuple[BeamConfig, BeamConfig]:
        return BeamConfig(self.k1, self.t_max1), BeamConfig(self.k2, self.t_max2)

    # -- text form -----------------------------------------------------------
    def resolved_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in sorted(fields(self), key=lambda f: f.name))

    def config_hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:16]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _parse(kind, raw: str):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {raw!r}")
    if kind is int or kind == "int":
        return int(raw)
    if kind is float or kind == "float":
        return float(raw)
    return raw


FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def parse_config(text: str, where: str = "<config>") -> Config:
    values: dict = {}
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep or not key:
            raise ValueError(f"{where}:{k}: expected 'key = value', got {line!r}")
        if key not in FIELD_TYPES:
            raise ValueError(f"{where}:{k}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"{where}:{k}: duplicate config key {key!r}")
        try:
            values[key] = _parse(FIELD_TYPES[key], raw)
        except ValueError as exc:
            raise ValueError(f"{where}:{k}: bad value for {key!r}: {exc}") from None
    return Config(**values)


def load_config(path) -> Config:
    from .formats import read_text
    return parse_config(read_text(path), str(path))
