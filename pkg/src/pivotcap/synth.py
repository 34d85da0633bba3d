"""Deterministic synthetic world: scenes, image features, and the four corpora.

The world has a pivot language and a target language related by a token-level
dictionary.  Sentences come from two domains:

* caption domain: short scene descriptions (image-caption pairs in the pivot
  language, caption-style target sentences for the autoencoder and evaluation);
* translation domain: chattier pivot/target pairs with their own style words,
  different word order in the pivot, a skewed content distribution and some
  content words that never appear in captions.

Style words never cross domains, so a pipeline trained only on translation
data speaks the wrong register when asked to describe images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .rng import Rng
from .vocab import Vocab, build_vocab

SLOTS = ("S", "V", "O", "Z")

# target word -> pivot word; slot inventories are ordered (index = scene id component)
SUBJECTS = [("man", "nanren"), ("woman", "nvren"), ("boy", "nanhai"), ("girl", "nvhai"),
            ("dog", "gou"), ("cat", "mao"), ("player", "qiuyuan"), ("child", "haizi")]
VERBS = [("eating", "chi"), ("holding", "na"), ("riding", "qi"), ("watching", "kan"),
         ("throwing", "reng"), ("carrying", "bei")]
OBJECTS = [("apple", "pingguo"), ("ball", "qiu"), ("bike", "danche"), ("kite", "fengzheng"),
           ("book", "shu"), ("pizza", "bisa"), ("board", "huaban"), ("frisbee", "feipan")]
SETTINGS = [("park", "gongyuan"), ("street", "jiedao"), ("beach", "haitan"), ("kitchen", "chufang")]
# objects that only the translation domain talks about
EXTRA_OBJECTS = [("phone", "shouji"), ("money", "qian"), ("letter", "xinjian"), ("car", "qiche")]

NEUTRAL = [("a", "yi"), ("the", "zhe"), ("is", "zheng"), ("in", "zai")]
CAPTION_STYLE = [("there", "you"), ("photo", "zhaopian"), ("of", "de"), ("near", "pangbian"),
                 ("an", "yizhang"), ("image", "tuxiang"), ("close", "jin"), ("up", "jing")]
TRANSLATION_STYLE = [("i", "wo"), ("think", "juede"), ("my", "wode"), ("today", "jintian"),
                     ("you", "ni"), ("know", "zhidao"), ("was", "ceng"), ("yesterday", "zuotian"),
                     ("said", "shuo"), ("he", "ta"), ("likes", "xihuan"), ("really", "zhende"),
                     (",", "，")]

# caption templates are target-side; their pivot side is the word-by-word image
CAPTION_TEMPLATES = [
    "there is a {S} {V} a {O} in the {Z}",
    "a photo of a {S} {V} a {O}",
    "a {S} {V} a {O} near the {Z}",
    "an image of a {S} {V} a {O} in the {Z}",
    "a close up of a {S} {V} a {O}",
    "a {S} is {V} a {O} near a {Z}",
]

# (pivot template, target template); pivot fronts time words and location phrases
TRANSLATION_TEMPLATES = [
    ("wo juede zhe {S} zheng {V} zhe {O}", "i think the {S} is {V} the {O}"),
    ("jintian wode {S} zai zhe {Z} zheng {V} yi {O}", "my {S} is {V} a {O} in the {Z} today"),
    ("ni zhidao zuotian zhe {S} ceng {V} yi {O}", "you know the {S} was {V} a {O} yesterday"),
    ("zhe {S} shuo ta xihuan {V} zhe {O}", "the {S} said he likes {V} the {O}"),
    ("zhende ， zhe {S} zai zhe {Z} zheng {V} yi {O}", "really , the {S} is {V} a {O} in the {Z}"),
]


@dataclass(frozen=True)
class Scene:
    subject: int
    verb: int
    object: int
    setting: int

    def index(self, sizes: tuple[int, int, int, int]) -> int:
        s, v, o, z = sizes
        return ((self.subject * v + self.verb) * o + self.object) * z + self.setting

    @classmethod
    def from_index(cls, idx: int, sizes: tuple[int, int, int, int]) -> "Scene":
        _, v, o, z = sizes
        idx, setting = divmod(idx, z)
        idx, obj = divmod(idx, o)
        subject, verb = divmod(idx, v)
        return cls(subject, verb, obj, setting)


@dataclass
class SynthWorldConfig:
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
    zipf: float = 1.0  # skew of translation-domain content choices

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.n_subject, self.n_verb, self.n_object, self.n_setting)

    @property
    def n_scenes(self) -> int:
        return int(np.prod(self.sizes))

    def lexicon(self) -> dict[str, list[tuple[str, str]]]:
        return {"S": SUBJECTS[:self.n_subject], "V": VERBS[:self.n_verb],
                "O": OBJECTS[:self.n_object], "Z": SETTINGS[:self.n_setting]}

    def dictionary(self) -> dict[str, str]:
        """Ground-truth target -> pivot token map (content, neutral and style words)."""
        pairs = [p for slot in self.lexicon().values() for p in slot]
        pairs += EXTRA_OBJECTS + NEUTRAL + CAPTION_STYLE + TRANSLATION_STYLE
        return dict(pairs)

    def content_words(self, domain: str, side: str = "target") -> set[str]:
        """Non-style vocabulary a domain can emit on ``side`` ("target" or "pivot")."""
        lex = self.lexicon()
        pairs = [p for slot in lex.values() for p in slot] + NEUTRAL
        if domain == "translation":
            pairs = pairs + EXTRA_OBJECTS
        k = 0 if side == "target" else 1
        return {p[k] for p in pairs}

    def style_words(self, domain: str, side: str = "target") -> set[str]:
        k = 0 if side == "target" else 1
        pairs = CAPTION_STYLE if domain == "caption" else TRANSLATION_STYLE
        return {p[k] for p in pairs}

    def validate(self) -> None:
        if min(self.sizes) < 1:
            raise ValueError("inventory sizes must be >= 1")
        if (self.n_subject > len(SUBJECTS) or self.n_verb > len(VERBS)
                or self.n_object > len(OBJECTS) or self.n_setting > len(SETTINGS)):
            raise ValueError("inventory larger than the built-in lexicon")
        if min(self.n_caption, self.n_parallel, self.n_target, self.n_eval) < 1:
            raise ValueError("corpus sizes must be >= 1")
        if not 1 <= self.n_refs <= len(CAPTION_TEMPLATES):
            raise ValueError(f"n_refs must lie in [1, {len(CAPTION_TEMPLATES)}]")
        if self.n_eval >= self.n_scenes:
            raise ValueError("eval scenes must leave training scenes")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("val_fraction must lie in [0, 1)")
        for side in ("target", "pivot"):
            a, b = self.content_words("caption", side), self.content_words("translation", side)
            if len(a & b) / len(a | b) < 0.8:
                raise ValueError("caption/translation content vocabularies overlap < 80%")
            if self.style_words("caption", side) & self.style_words("translation", side):
                raise ValueError("style-token sets must be disjoint between domains")
        known = set(self.dictionary()) | {"{S}", "{V}", "{O}", "{Z}"}
        known_p = set(self.dictionary().values()) | {"{S}", "{V}", "{O}", "{Z}"}
        for t in CAPTION_TEMPLATES:
            if not set(t.split()) <= known:
                raise ValueError(f"caption template uses unknown words: {t}")
        for p, t in TRANSLATION_TEMPLATES:
            if not set(t.split()) <= known or not set(p.split()) <= known_p:
                raise ValueError(f"translation template uses unknown words: {p} / {t}")
            if sorted(w for w in p.split() if w.startswith("{")) != sorted(w for w in t.split() if w.startswith("{")):
                raise ValueError(f"translation template slots disagree: {p} / {t}")
        longest = max(len(t.split()) for t in CAPTION_TEMPLATES + [x for pair in TRANSLATION_TEMPLATES for x in pair])
        if longest > self.max_len:
            raise ValueError("templates exceed the maximum sentence length")


# ---------------------------------------------------------------------------

def _fill(template: str, words: dict[str, str]) -> list[str]:
    out = []
    for tok in template.split():
        out.append(words[tok[1]] if tok.startswith("{") else tok)
    return out


def relexify(tokens, mapping: dict[str, str]) -> list[str]:
    return [mapping[t] for t in tokens]


def caption_target(scene: Scene, template: int, cfg: SynthWorldConfig) -> list[str]:
    lex = cfg.lexicon()
    words = {"S": lex["S"][scene.subject][0], "V": lex["V"][scene.verb][0],
             "O": lex["O"][scene.object][0], "Z": lex["Z"][scene.setting][0]}
    return _fill(CAPTION_TEMPLATES[template], words)[:cfg.max_len]


def caption_pivot(scene: Scene, template: int, cfg: SynthWorldConfig) -> list[str]:
    return relexify(caption_target(scene, template, cfg), cfg.dictionary())


def feature_projection(cfg: SynthWorldConfig, seed: int) -> np.ndarray:
    """Fixed Gaussian map from concatenated slot one-hots to ``feat_dim``."""
    n_in = sum(cfg.sizes)
    return Rng(seed, "world", "projection").normal((n_in, cfg.feat_dim)) / np.sqrt(len(cfg.sizes))


def scene_to_feature(scene: Scene, cfg: SynthWorldConfig, rng: Rng | None, projection: np.ndarray) -> np.ndarray:
    """One-hot slots times the projection, plus N(0, noise^2) drawn from ``rng``."""
    onehot = np.zeros(sum(cfg.sizes))
    offset = 0
    for value, size in zip((scene.subject, scene.verb, scene.object, scene.setting), cfg.sizes):
        if not 0 <= value < size:
            raise ValueError(f"scene slot value {value} outside inventory of size {size}")
        onehot[offset + value] = 1.0
        offset += size
    feat = onehot @ projection
    if cfg.noise > 0 and rng is not None:
        feat = feat + rng.normal((cfg.feat_dim,), scale=cfg.noise)
    return feat


@dataclass
class CaptionSet:
    feats: np.ndarray            # [N, D]
    scenes: list[int]
    sentences: list[list[str]]   # pivot, caption domain


@dataclass
class ParallelSet:
    src: list[list[str]]   # pivot, translation domain
    tgt: list[list[str]]   # target, translation domain


@dataclass
class EvalSet:
    feats: np.ndarray
    scenes: list[int]
    refs: list[list[list[str]]]  # [item][ref] tokens, target caption domain


@dataclass
class Corpora:
    caption: CaptionSet
    caption_val: CaptionSet
    parallel: ParallelSet
    parallel_val: ParallelSet
    target: list[list[str]]
    target_val: list[list[str]]
    eval: EvalSet
    train_scenes: list[int] = field(default_factory=list)


def _zipf_weights(n: int, s: float, rng: Rng) -> np.ndarray:
    ranks = rng.permutation(n) + 1
    w = 1.0 / ranks.astype(float) ** s
    return w / w.sum()


def split_scenes(cfg: SynthWorldConfig, seed: int) -> tuple[list[int], list[int]]:
    perm = Rng(seed, "world", "scene-split").permutation(cfg.n_scenes)
    return sorted(perm[cfg.n_eval:].tolist()), sorted(perm[:cfg.n_eval].tolist())


def gen_corpora(cfg: SynthWorldConfig, seed: int) -> Corpora:
    cfg.validate()
    root = Rng(seed, "world")
    proj = feature_projection(cfg, seed)
    train_scenes, eval_scenes = split_scenes(cfg, seed)
    n_val = lambda n: int(round(n * cfg.val_fraction))  # noqa: E731

    def caption_set(n: int, label: str) -> CaptionSet:
        r = root.derive("captions", label)
        picks = r.integers(len(train_scenes), (n,))
        templates = r.integers(len(CAPTION_TEMPLATES), (n,))
        noise = r.derive("noise")
        feats, scenes, sents = [], [], []
        for k in range(n):
            sid = train_scenes[int(picks[k])]
            scene = Scene.from_index(sid, cfg.sizes)
            feats.append(scene_to_feature(scene, cfg, noise, proj))
            scenes.append(sid)
            sents.append(caption_pivot(scene, int(templates[k]), cfg))
        return CaptionSet(np.array(feats).reshape(n, cfg.feat_dim), scenes, sents)

    lex = cfg.lexicon()
    objects = lex["O"] + EXTRA_OBJECTS
    skew = root.derive("skew")
    w_subject = _zipf_weights(len(lex["S"]), cfg.zipf, skew.derive("S"))
    w_object = _zipf_weights(len(objects), cfg.zipf, skew.derive("O"))

    def parallel_set(n: int, label: str) -> ParallelSet:
        r = root.derive("parallel", label)
        src, tgt = [], []
        for _ in range(n):
            p_tmpl, t_tmpl = TRANSLATION_TEMPLATES[int(r.integers(len(TRANSLATION_TEMPLATES)))]
            s = lex["S"][r.choice(len(lex["S"]), w_subject)]
            v = lex["V"][int(r.integers(len(lex["V"])))]
            o = objects[r.choice(len(objects), w_object)]
            z = lex["Z"][int(r.integers(len(lex["Z"])))]
            slot = dict(zip(SLOTS, (s, v, o, z)))
            src.append(_fill(p_tmpl, {k: w[1] for k, w in slot.items()})[:cfg.max_len])
            tgt.append(_fill(t_tmpl, {k: w[0] for k, w in slot.items()})[:cfg.max_len])
        return ParallelSet(src, tgt)

    def target_set(n: int, label: str) -> list[list[str]]:
        r = root.derive("target", label)
        picks = r.integers(len(train_scenes), (n,))
        templates = r.integers(len(CAPTION_TEMPLATES), (n,))
        return [caption_target(Scene.from_index(train_scenes[int(picks[k])], cfg.sizes), int(templates[k]), cfg)
                for k in range(n)]

    r_eval = root.derive("eval")
    order = r_eval.permutation(len(eval_scenes))
    e_scenes = [eval_scenes[int(i)] for i in order]
    noise = r_eval.derive("noise")
    e_feats, e_refs = [], []
    for sid in e_scenes:
        scene = Scene.from_index(sid, cfg.sizes)
        e_feats.append(scene_to_feature(scene, cfg, noise, proj))
        tmpl = r_eval.permutation(len(CAPTION_TEMPLATES))[:cfg.n_refs]
        e_refs.append([caption_target(scene, int(t), cfg) for t in tmpl])

    return Corpora(
        caption=caption_set(cfg.n_caption, "train"),
        caption_val=caption_set(max(1, n_val(cfg.n_caption)), "val"),
        parallel=parallel_set(cfg.n_parallel, "train"),
        parallel_val=parallel_set(max(1, n_val(cfg.n_parallel)), "val"),
        target=target_set(cfg.n_target, "train"),
        target_val=target_set(max(1, n_val(cfg.n_target)), "val"),
        eval=EvalSet(np.array(e_feats).reshape(len(e_scenes), cfg.feat_dim), e_scenes, e_refs),
        train_scenes=train_scenes,
    )


def corpus_vocabs(corpora: Corpora, min_freq: int = 5) -> dict[str, Vocab]:
    """The four vocabularies: captioner pivot, translator source/target, autoencoder target."""
    return {
        "caption": build_vocab(corpora.caption.sentences, min_freq),
        "src": build_vocab(corpora.parallel.src, min_freq),
        "tgt": build_vocab(corpora.parallel.tgt, min_freq),
        "target": build_vocab(corpora.target, min_freq),
    }


def oracle_captions(eval_set: EvalSet, cfg: SynthWorldConfig, template: int = 0) -> list[list[str]]:
    """Ground-truth pivot caption per eval scene mapped to the target by the dictionary."""
    inverse = {p: t for t, p in cfg.dictionary().items()}
    return [relexify(caption_pivot(Scene.from_index(s, cfg.sizes), template, cfg), inverse)
            for s in eval_set.scenes]


def style_classifier_accuracy(cfg: SynthWorldConfig, caption_sents, translation_sents) -> float:
    """Unigram Naive Bayes on style tokens only, fit and scored on the given sentences."""
    styles = sorted(cfg.style_words("caption") | cfg.style_words("translation"))
    index = {w: i for i, w in enumerate(styles)}

    def counts(sents):
        m = np.zeros((len(sents), len(styles)))
        for k, s in enumerate(sents):
            for w in s:
                if w in index:
                    m[k, index[w]] += 1
        return m

    xc, xt = counts(caption_sents), counts(translation_sents)
    log_pc = np.log((xc.sum(0) + 1) / (xc.sum() + len(styles)))
    log_pt = np.log((xt.sum(0) + 1) / (xt.sum() + len(styles)))
    prior = np.log(len(caption_sents) / len(translation_sents))
    score_c = xc @ (log_pc - log_pt) + prior
    score_t = xt @ (log_pc - log_pt) + prior
    correct = (score_c > 0).sum() + (score_t <= 0).sum()
    return float(correct / (len(caption_sents) + len(translation_sents)))


def all_scenes(cfg: SynthWorldConfig) -> list[Scene]:
    return [Scene(*s) for s in product(*(range(n) for n in cfg.sizes))]
