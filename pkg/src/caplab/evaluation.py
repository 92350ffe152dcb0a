"""Descriptiveness, accuracy, and fluency metrics with oracle backends.

Self-retrieval scores a generated caption against every pooled scene by the
cosine between the caption's bag-of-concepts vector and the scene's feature
bits, so retrieval numbers are exactly reproducible by brute force. Accuracy
is oracle precision: the fraction of generated concept words whose bit is
set in the true scene. Fluency is proxied by a held-out add-1 bigram model's
perplexity on the generated text.

Caption length and lexical diversity count every non-special token (the
article included); stop words only drop out where concepts are scored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import objectives
from .corpus import Sample, Vocabulary, content_token_ids
from .decoder import DecodeConfig, DecodeResult, decode_scenes
from .model import ModelConfig

VIZ_SCHEMA_VERSION = "viz_v1"

# JSON Schema for the token-level visualization record (draft 2020-12).
VIZ_V1_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "tokens", "positions"],
    "properties": {
        "schema": {"const": VIZ_SCHEMA_VERSION},
        "scene_id": {"type": "integer"},
        "tokens": {"type": "array", "items": {"type": "string"}},
        "positions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "position",
                    "label",
                    "top_full",
                    "top_admitted",
                    "mle_loss",
                    "smile_loss",
                ],
                "properties": {
                    "position": {"type": "integer"},
                    "label": {"type": "string"},
                    "top_full": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "prefixItems": [{"type": "string"}, {"type": "number"}],
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                    "top_admitted": {
                        "type": "array",
                        "items": {
                            "type": "array",
                            "prefixItems": [{"type": "string"}, {"type": "number"}],
                            "minItems": 2,
                            "maxItems": 2,
                        },
                    },
                    "mle_loss": {"type": "number"},
                    "smile_loss": {"type": "number"},
                },
            },
        },
    },
}


@dataclass
class RetrievalPool:
    """Candidate scenes for self-retrieval; ids must be unique.

    Hard distractors are synthetic near-duplicates (one attribute swapped)
    that raise the bar on descriptiveness; they carry negative scene ids so
    they can never collide with real entries.
    """

    entries: list[tuple[int, np.ndarray]] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [sid for sid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("pool scene_ids must be unique")


def pool_from_samples(samples: list[Sample]) -> RetrievalPool:
    seen: dict[int, np.ndarray] = {}
    for s in samples:
        seen.setdefault(s.scene_id, s.features)
    return RetrievalPool(entries=sorted(seen.items()))


def add_hard_distractors(
    pool: RetrievalPool,
    adjective_range: tuple[int, int],
    per_entry: int,
    rng: np.random.Generator,
) -> RetrievalPool:
    """Return a new pool with near-duplicate entries added.

    Each distractor copies a real entry's features and swaps exactly one set
    adjective bit for an unset one within ``adjective_range`` (half-open
    concept-index range covering the adjective block).
    """
    lo, hi = adjective_range
    entries = list(pool.entries)
    next_id = -1
    for sid, feats in pool.entries:
        set_bits = [j for j in range(lo, hi) if feats[j]]
        unset_bits = [j for j in range(lo, hi) if not feats[j]]
        if not set_bits or not unset_bits:
            continue
        for _ in range(per_entry):
            fake = feats.copy()
            fake[set_bits[rng.integers(len(set_bits))]] = 0
            fake[unset_bits[rng.integers(len(unset_bits))]] = 1
            entries.append((next_id, fake))
            next_id -= 1
    return RetrievalPool(entries=entries)


@dataclass
class EvalReport:
    mean_caption_length: float
    lexical_diversity: int
    r_at_1: float
    r_at_5: float
    oracle_precision: float
    ppl_proxy: float

    def as_dict(self) -> dict:
        return {
            "mean_caption_length": self.mean_caption_length,
            "lexical_diversity": self.lexical_diversity,
            "r_at_1": self.r_at_1,
            "r_at_5": self.r_at_5,
            "oracle_precision": self.oracle_precision,
            "ppl_proxy": self.ppl_proxy,
        }


def concept_vector(token_ids: list[int], vocab: Vocabulary) -> np.ndarray:
    """Binary bag-of-concepts for a caption; stop words carry no bit."""
    bits = np.zeros(vocab.n_concepts, dtype=np.float64)
    for tid in token_ids:
        j = vocab.concept_index.get(tid)
        if j is not None:
            bits[j] = 1.0
    return bits


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.dot(a, a)) ** 0.5
    nb = float(np.dot(b, b)) ** 0.5
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


def self_retrieval(
    captions: dict[int, list[int]], pool: RetrievalPool, vocab: Vocabulary
) -> tuple[float, float]:
    """R@1 and R@5 of recovering each caption's scene from the pool.

    Candidates are ranked by (cosine desc, scene_id asc); an empty or
    concept-free caption scores zero against everything.
    """
    pool_ids = {sid for sid, _ in pool.entries}
    missing = set(captions) - pool_ids
    if missing:
        raise ValueError(f"captions reference scenes outside the pool: {sorted(missing)}")
    hits1 = hits5 = 0
    for scene_id, token_ids in captions.items():
        bag = concept_vector(token_ids, vocab)
        ranked = sorted(
            ((-_cosine(bag, feats), sid) for sid, feats in pool.entries),
        )
        top = [sid for _, sid in ranked[:5]]
        if top and top[0] == scene_id:
            hits1 += 1
        if scene_id in top:
            hits5 += 1
    n = max(len(captions), 1)
    return hits1 / n, hits5 / n


def mean_caption_length(captions: dict[int, list[int]], vocab: Vocabulary) -> float:
    if not captions:
        return 0.0
    return float(
        np.mean([len(content_token_ids(ids, vocab)) for ids in captions.values()])
    )


def lexical_diversity(captions: dict[int, list[int]], vocab: Vocabulary) -> int:
    """Distinct non-special tokens across all captions (order/dup invariant)."""
    words: set[int] = set()
    for ids in captions.values():
        words.update(content_token_ids(ids, vocab))
    return len(words)


def oracle_precision(
    captions: dict[int, list[int]],
    features_by_scene: dict[int, np.ndarray],
    vocab: Vocabulary,
) -> float:
    """Fraction of generated concept words present in the true scene.

    Micro-averaged over all concept words of all captions; vacuously 1.0
    when no concept words were generated.
    """
    total = correct = 0
    for scene_id, ids in captions.items():
        feats = features_by_scene[scene_id]
        for tid in ids:
            j = vocab.concept_index.get(tid)
            if j is None:
                continue
            total += 1
            correct += int(feats[j])
    return correct / total if total else 1.0


class BigramModel:
    """Add-1-smoothed bigram language model over token ids."""

    def __init__(self, vocab_size: int):
        self.vocab_size = vocab_size
        self.counts: dict[int, dict[int, int]] = {}
        self.context_totals: dict[int, int] = {}

    def fit(self, sequences: list[list[int]]) -> "BigramModel":
        for seq in sequences:
            for prev, cur in zip(seq[:-1], seq[1:]):
                row = self.counts.setdefault(prev, {})
                row[cur] = row.get(cur, 0) + 1
                self.context_totals[prev] = self.context_totals.get(prev, 0) + 1
        return self

    def log_prob(self, prev: int, cur: int) -> float:
        c = self.counts.get(prev, {}).get(cur, 0)
        n = self.context_totals.get(prev, 0)
        return float(np.log((c + 1) / (n + self.vocab_size)))

    def perplexity(self, sequences: list[list[int]]) -> float:
        logps = [
            self.log_prob(prev, cur)
            for seq in sequences
            for prev, cur in zip(seq[:-1], seq[1:])
        ]
        if not logps:
            return float("nan")
        return float(np.exp(-np.mean(logps)))


def descriptiveness_report(
    params: dict,
    model_config: ModelConfig,
    vocab: Vocabulary,
    eval_samples: list[Sample],
    pool: RetrievalPool,
    decode_config: DecodeConfig,
    bigram: BigramModel,
) -> EvalReport:
    """Decode one caption per scene in the split and assemble all metrics."""
    scene_feats: dict[int, np.ndarray] = {}
    for s in eval_samples:
        scene_feats.setdefault(s.scene_id, s.features)
    results = decode_scenes(
        params,
        model_config,
        sorted(scene_feats.items()),
        decode_config,
        vocab.bos_id,
        vocab.eos_id,
    )
    captions = {sid: r.tokens for sid, r in results.items()}
    r1, r5 = self_retrieval(captions, pool, vocab)
    return EvalReport(
        mean_caption_length=mean_caption_length(captions, vocab),
        lexical_diversity=lexical_diversity(captions, vocab),
        r_at_1=r1,
        r_at_5=r5,
        oracle_precision=oracle_precision(captions, scene_feats, vocab),
        ppl_proxy=BigramModel.perplexity(bigram, list(captions.values())),
    )


def export_token_viz(
    logits: np.ndarray,
    labels: np.ndarray,
    mask: objectives.SubsetMask,
    vocab: Vocabulary,
    scene_id: int | None = None,
    top_k: int = 5,
) -> dict:
    """Token-level predictive distributions and penalties for one sequence.

    For each position: the top-k full-vocabulary probabilities, the top-k
    admitted-subset probabilities, and both per-token losses. Blocked tokens
    can dominate the full distribution while leaving the restricted loss
    untouched, which is the mechanism this view exists to show.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2 or labels.ndim != 1:
        raise ValueError("export_token_viz expects a single sequence")
    batch_logits = logits[None]
    batch_labels = labels[None]
    full_report, _ = objectives.mle_loss(batch_logits, batch_labels, want_probs=True)
    sub_report, _ = objectives.smile_loss(batch_logits, batch_labels, mask, want_probs=True)

    def top(probs: np.ndarray) -> list[list]:
        order = np.argsort(-probs, kind="stable")[:top_k]
        return [[vocab.tokens[int(j)], float(probs[j])] for j in order]

    positions = []
    for t in range(labels.shape[0]):
        positions.append(
            {
                "position": t,
                "label": vocab.tokens[int(labels[t])],
                "top_full": top(full_report.per_token_probs[0, t]),
                "top_admitted": top(sub_report.per_token_probs[0, t]),
                "mle_loss": float(full_report.per_token[0, t]),
                "smile_loss": float(sub_report.per_token[0, t]),
            }
        )
    record = {
        "schema": VIZ_SCHEMA_VERSION,
        "tokens": [vocab.tokens[int(t)] for t in labels],
        "positions": positions,
    }
    if scene_id is not None:
        record["scene_id"] = int(scene_id)
    return record


def write_viz(record: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2)
