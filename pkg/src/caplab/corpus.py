"""Synthetic scene/caption corpus: generation, tokenization, persistence.

A scene is a small bundle of entities (noun + adjectives, optionally a verb
and an acted-upon target). Its "image" is a multi-hot feature vector with one
bit per concept (noun/adjective/verb) present anywhere in the scene. Captions
are templated descriptions of the first entity at four detail levels:

    level 0   a <noun>
    level 1   a <noun> <verb>
    level 2   a <adj> <noun> <verb>
    level 3   a <adj...> <noun> <verb> a <adj?> <target-noun>

Parts a scene lacks (no action, no target) are simply omitted, so realized
caption lengths vary within a level. ``mode="simplest"`` keeps only level-0
captions and ``mode="simpler"`` only level-1; both reuse the exact scenes the
full corpus would generate for the same seed, so ablation corpora differ only
in their captions.

Everything is a pure function of (seed, config): generating twice yields
byte-identical corpora.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

ARTICLE = "a"
ARTICLE_ALIAS = "a_alt"

# Fixed stop-list: these count toward caption length / diversity but carry no
# concept bit, so they are invisible to retrieval and oracle precision.
STOP_WORDS = frozenset({"a", "the", "and"})

NOUNS = [
    "bus", "cat", "dog", "girl", "boy", "house", "tree", "car", "bird",
    "horse", "boat", "train", "truck", "bear", "fox", "frog", "chair",
    "table", "lamp", "clock", "kite", "drum", "apple", "fish", "sheep",
    "goat", "duck", "owl", "wolf", "deer",
]
ADJECTIVES = [
    "red", "blue", "green", "small", "big", "old", "young", "fast", "slow",
    "tall", "short", "bright", "dark", "round", "square", "soft", "loud",
    "quiet", "clean", "dirty",
]
VERBS = [
    "runs", "jumps", "sleeps", "drives", "carries", "watches", "follows",
    "pulls", "pushes", "holds",
]

MODES = ("full", "simplest", "simpler")
N_DETAIL_LEVELS = 4


class CorpusFormatError(ValueError):
    """Raised when a persisted corpus file cannot be parsed."""


@dataclass
class Vocabulary:
    """Token/id map with special tokens and rare-alias pairs.

    Ids are dense ``0..len(tokens)-1`` (the position in ``tokens``).
    ``rare_alias`` maps a token id to an alias id whose token never appears
    in any generated caption; it backs the first-token label shifting
    strategy. Concept ids (tokens carrying a feature bit) are every token
    that is neither special, nor a stop word, nor an alias target; their
    order within ``tokens`` fixes the feature-vector layout.
    """

    tokens: list[str]
    specials: dict[str, int]
    rare_alias: dict[int, int]

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")
        if len(set(self.specials.values())) != len(self.specials):
            raise ValueError("special token ids must be distinct")
        for src, dst in self.rare_alias.items():
            if not (0 <= dst < len(self.tokens)):
                raise ValueError(f"alias target {dst} outside vocabulary")
            if src == dst:
                raise ValueError(f"alias target equals source id {src}")

    @cached_property
    def id_of(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    @property
    def pad_id(self) -> int:
        return self.specials["pad"]

    @property
    def bos_id(self) -> int:
        return self.specials["bos"]

    @property
    def eos_id(self) -> int:
        return self.specials["eos"]

    @property
    def unk_id(self) -> int:
        return self.specials["unk"]

    @cached_property
    def special_ids(self) -> frozenset[int]:
        return frozenset(self.specials.values())

    @cached_property
    def concept_ids(self) -> list[int]:
        alias_targets = set(self.rare_alias.values())
        return [
            i
            for i, tok in enumerate(self.tokens)
            if i not in self.special_ids
            and tok not in STOP_WORDS
            and i not in alias_targets
        ]

    @cached_property
    def concept_index(self) -> dict[int, int]:
        """Token id -> feature-vector position, for concept tokens only."""
        return {tid: j for j, tid in enumerate(self.concept_ids)}

    @property
    def n_concepts(self) -> int:
        return len(self.concept_ids)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Entity:
    """One scene participant: a noun with adjectives, optionally acting."""

    noun: str
    attributes: list[str]
    action: str | None = None
    target: tuple[str, list[str]] | None = None  # (noun, adjectives) acted on


@dataclass
class Scene:
    scene_id: int
    entities: list[Entity]
    features: np.ndarray  # uint8 multi-hot over the concept inventory


@dataclass
class Sample:
    scene_id: int
    features: np.ndarray
    caption: list[int]  # token ids, BOS ... EOS
    detail_level: int


@dataclass
class CorpusConfig:
    seed: int = 0
    n_scenes: int = 500
    mode: str = "full"
    # Probabilities over detail levels 0..3; None picks the mode default
    # (uniform for "full", degenerate for the ablation modes).
    detail_distribution: tuple[float, float, float, float] | None = None
    n_nouns: int = 30
    n_adjectives: int = 20
    n_verbs: int = 10
    paraphrases: int = 1
    p_second_entity: float = 0.5
    p_action: float = 0.6
    p_target: float = 0.5  # given an action

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}, expected one of {MODES}")
        if self.n_scenes <= 0:
            raise ValueError("n_scenes must be positive")
        if self.paraphrases < 1:
            raise ValueError("paraphrases must be >= 1")
        if not (0 < self.n_nouns <= len(NOUNS)):
            raise ValueError(f"n_nouns must be in 1..{len(NOUNS)}")
        if not (0 < self.n_adjectives <= len(ADJECTIVES)):
            raise ValueError(f"n_adjectives must be in 1..{len(ADJECTIVES)}")
        if not (0 < self.n_verbs <= len(VERBS)):
            raise ValueError(f"n_verbs must be in 1..{len(VERBS)}")
        for name in ("p_second_entity", "p_action", "p_target"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be a probability, got {p}")
        dist = self.resolved_distribution()
        if len(dist) != N_DETAIL_LEVELS:
            raise ValueError("detail_distribution needs one entry per level 0..3")
        if any(p < 0 for p in dist):
            raise ValueError("detail_distribution entries must be non-negative")
        if abs(sum(dist) - 1.0) > 1e-9:
            raise ValueError("detail_distribution must sum to 1")
        if self.mode == "simplest" and any(p > 0 for p in dist[1:]):
            raise ValueError("mode=simplest admits mass on detail level 0 only")
        if self.mode == "simpler" and any(dist[i] > 0 for i in (0, 2, 3)):
            raise ValueError("mode=simpler admits mass on detail level 1 only")

    def resolved_distribution(self) -> tuple[float, ...]:
        if self.detail_distribution is not None:
            return tuple(self.detail_distribution)
        if self.mode == "simplest":
            return (1.0, 0.0, 0.0, 0.0)
        if self.mode == "simpler":
            return (0.0, 1.0, 0.0, 0.0)
        return (0.25, 0.25, 0.25, 0.25)


def build_vocabulary(config: CorpusConfig) -> Vocabulary:
    """Vocabulary for a corpus config: specials, article + alias, concepts."""
    tokens = [PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, ARTICLE, ARTICLE_ALIAS]
    tokens += NOUNS[: config.n_nouns]
    tokens += ADJECTIVES[: config.n_adjectives]
    tokens += VERBS[: config.n_verbs]
    specials = {"pad": 0, "bos": 1, "eos": 2, "unk": 3}
    rare_alias = {tokens.index(ARTICLE): tokens.index(ARTICLE_ALIAS)}
    return Vocabulary(tokens=tokens, specials=specials, rare_alias=rare_alias)


def _scene_features(entities: list[Entity], vocab: Vocabulary) -> np.ndarray:
    bits = np.zeros(vocab.n_concepts, dtype=np.uint8)

    def mark(word: str) -> None:
        bits[vocab.concept_index[vocab.id_of[word]]] = 1

    for e in entities:
        mark(e.noun)
        for adj in e.attributes:
            mark(adj)
        if e.action:
            mark(e.action)
        if e.target:
            noun, adjs = e.target
            mark(noun)
            for adj in adjs:
                mark(adj)
    return bits


def caption_words(scene: Scene, level: int) -> list[str]:
    """Template caption for the scene's first entity at a detail level.

    Parts the entity lacks are omitted, so e.g. level 1 of an actionless
    scene degrades to the level-0 form.
    """
    if not (0 <= level < N_DETAIL_LEVELS):
        raise ValueError(f"detail level must be 0..3, got {level}")
    e = scene.entities[0]
    words = [ARTICLE]
    if level == 2:
        words.append(e.attributes[0])
    elif level == 3:
        words.extend(e.attributes)
    words.append(e.noun)
    if level >= 1 and e.action:
        words.append(e.action)
    if level == 3 and e.action and e.target:
        noun, adjs = e.target
        words.append(ARTICLE)
        words.extend(adjs)
        words.append(noun)
    return words


def generate_corpus(
    config: CorpusConfig,
) -> tuple[Vocabulary, list[Sample], list[Scene]]:
    """Generate (vocabulary, samples, scenes) deterministically from config.

    Scene structure depends only on (seed, counts, entity probabilities);
    captions are drawn from a separate stream, so the same seed yields the
    same scenes under every mode.
    """
    vocab = build_vocabulary(config)
    ss = np.random.SeedSequence(config.seed)
    scene_ss, caption_ss = ss.spawn(2)
    rng_scene = np.random.default_rng(scene_ss)
    rng_caption = np.random.default_rng(caption_ss)

    nouns = NOUNS[: config.n_nouns]
    adjectives = ADJECTIVES[: config.n_adjectives]
    verbs = VERBS[: config.n_verbs]

    scenes: list[Scene] = []
    for scene_id in range(config.n_scenes):
        subject_noun = nouns[rng_scene.integers(len(nouns))]
        n_attrs = int(rng_scene.integers(1, 3))
        attrs = [adjectives[i] for i in rng_scene.choice(len(adjectives), size=n_attrs, replace=False)]
        action = None
        target = None
        if rng_scene.random() < config.p_action:
            action = verbs[rng_scene.integers(len(verbs))]
            if rng_scene.random() < config.p_target:
                others = [n for n in nouns if n != subject_noun]
                t_noun = others[rng_scene.integers(len(others))]
                t_attrs = []
                if rng_scene.random() < 0.5:
                    t_attrs = [adjectives[rng_scene.integers(len(adjectives))]]
                target = (t_noun, t_attrs)
        entities = [Entity(subject_noun, attrs, action, target)]
        if rng_scene.random() < config.p_second_entity:
            others = [n for n in nouns if n != subject_noun]
            b_noun = others[rng_scene.integers(len(others))]
            b_attr = adjectives[rng_scene.integers(len(adjectives))]
            entities.append(Entity(b_noun, [b_attr]))
        features = _scene_features(entities, vocab)
        scenes.append(Scene(scene_id, entities, features))

    dist = np.asarray(config.resolved_distribution())
    samples: list[Sample] = []
    for scene in scenes:
        for _ in range(config.paraphrases):
            level = int(rng_caption.choice(N_DETAIL_LEVELS, p=dist))
            words = caption_words(scene, level)
            caption = tokenize(" ".join(words), vocab)
            samples.append(Sample(scene.scene_id, scene.features, caption, level))
    return vocab, samples, scenes


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """Whitespace word split with BOS/EOS framing; unknown words become UNK."""
    ids = [vocab.id_of.get(word, vocab.unk_id) for word in text.split()]
    return [vocab.bos_id] + ids + [vocab.eos_id]


def detokenize(ids: list[int], vocab: Vocabulary) -> str:
    """Inverse of tokenize for in-vocabulary text: drops BOS/EOS/PAD."""
    skip = {vocab.bos_id, vocab.eos_id, vocab.pad_id}
    return " ".join(vocab.tokens[i] for i in ids if i not in skip)


def content_token_ids(ids: list[int], vocab: Vocabulary) -> list[int]:
    """Token ids excluding specials: what counts toward length/diversity."""
    return [i for i in ids if i not in vocab.special_ids]


# ── Persistence ─────────────────────────────────────────────────────────

def write_corpus(samples: list[Sample], path) -> None:
    """Write one JSON object per sample: scene_id, features, caption, level."""
    with open(path, "w") as fh:
        for s in samples:
            fh.write(
                json.dumps(
                    {
                        "scene_id": s.scene_id,
                        "features": [int(b) for b in s.features],
                        "caption": list(s.caption),
                        "detail_level": s.detail_level,
                    }
                )
            )
            fh.write("\n")


def read_corpus(path) -> list[Sample]:
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                sample = Sample(
                    scene_id=int(obj["scene_id"]),
                    features=np.asarray(obj["features"], dtype=np.uint8),
                    caption=[int(t) for t in obj["caption"]],
                    detail_level=int(obj["detail_level"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusFormatError(f"line {lineno}: {exc}") from exc
            samples.append(sample)
    return samples


def write_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {
                "tokens": vocab.tokens,
                "specials": vocab.specials,
                "rare_alias": {str(k): v for k, v in vocab.rare_alias.items()},
            },
            fh,
        )


def read_vocab(path) -> Vocabulary:
    with open(path) as fh:
        obj = json.load(fh)
    return Vocabulary(
        tokens=list(obj["tokens"]),
        specials={k: int(v) for k, v in obj["specials"].items()},
        rare_alias={int(k): int(v) for k, v in obj["rare_alias"].items()},
    )
