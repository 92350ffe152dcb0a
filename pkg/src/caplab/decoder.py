"""Autoregressive inference over the full vocabulary: greedy and beam search.

Decoding never sees an admission mask — subset restrictions are a training
device only. Both modes are deterministic: equal logits break toward the
lowest token id, and equal hypothesis scores break toward the
lexicographically smallest token sequence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import ModelConfig, forward

# Maps a batch of equal-length prefixes to next-token logits [n, V]; the
# beam feeds all live hypotheses through one call.
StepFn = Callable[[list[list[int]]], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    mode: str = "beam"  # "greedy" or "beam"
    beam_width: int = 3
    max_len: int = 24   # cap on generated tokens (after BOS, incl. EOS)
    length_penalty: float = 1.0  # beam score = logp_sum / len**length_penalty

    def __post_init__(self) -> None:
        if self.mode not in ("greedy", "beam"):
            raise ValueError(f"unknown decode mode {self.mode!r}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class DecodeResult:
    tokens: list[int]   # BOS ... EOS (EOS missing iff truncated)
    finished: bool      # False when truncated at max_len without EOS
    score: float        # length-normalized log probability


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _normalized(logp_sum: float, n_tokens: int, penalty: float) -> float:
    return logp_sum / (n_tokens**penalty)


def decode_steps(step: StepFn, config: DecodeConfig, bos_id: int, eos_id: int) -> DecodeResult:
    """Decode from a step function mapping a prefix to next-token logits."""
    if config.mode == "greedy":
        return _greedy(step, config, bos_id, eos_id)
    return _beam(step, config, bos_id, eos_id)


def _greedy(step: StepFn, config: DecodeConfig, bos_id: int, eos_id: int) -> DecodeResult:
    tokens = [bos_id]
    logp_sum = 0.0
    for _ in range(config.max_len):
        logp = _log_softmax(step([tokens]))[0]
        nxt = int(np.argmax(logp))  # argmax returns the lowest index on ties
        logp_sum += float(logp[nxt])
        tokens.append(nxt)
        if nxt == eos_id:
            n = len(tokens) - 1
            return DecodeResult(tokens, True, _normalized(logp_sum, n, config.length_penalty))
    return DecodeResult(tokens, False, _normalized(logp_sum, len(tokens) - 1, config.length_penalty))


def _beam(step: StepFn, config: DecodeConfig, bos_id: int, eos_id: int) -> DecodeResult:
    # live hypotheses as (tokens-after-BOS, logp_sum); EOS retires a
    # hypothesis and consumes a beam slot, so beam_width=1 equals greedy
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    done: list[tuple[float, tuple[int, ...], float]] = []  # (norm score, tokens, logp)

    for _ in range(config.max_len):
        if not live:
            break
        logp_rows = _log_softmax(step([[bos_id, *prefix] for prefix, _ in live]))
        candidates: list[tuple[float, tuple[int, ...], float]] = []
        for (prefix, logp_sum), logp in zip(live, logp_rows):
            for tok in range(logp.shape[0]):
                total = logp_sum + float(logp[tok])
                candidates.append((total, prefix + (tok,), total))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        live = []
        for total, tokens, _ in candidates[: config.beam_width]:
            if tokens[-1] == eos_id:
                done.append((_normalized(total, len(tokens), config.length_penalty), tokens, total))
            else:
                live.append((tokens, total))

    if done:
        done.sort(key=lambda d: (-d[0], d[1]))
        score, tokens, _ = done[0]
        return DecodeResult([bos_id, *tokens], True, score)
    # nothing terminated: return the best truncated hypothesis, flagged
    best = max(live, key=lambda h: (_normalized(h[1], len(h[0]), config.length_penalty), [-t for t in h[0]]))
    tokens, logp_sum = best
    return DecodeResult(
        [bos_id, *tokens], False, _normalized(logp_sum, len(tokens), config.length_penalty)
    )


def model_step(params: dict, config: ModelConfig, features: np.ndarray) -> StepFn:
    """Bind a model and one feature vector into a decode step function."""
    features = np.asarray(features, dtype=config.np_dtype).reshape(1, -1)

    def step(prefixes: list[list[int]]) -> np.ndarray:
        tokens = np.asarray(prefixes, dtype=np.int64)
        feats = np.repeat(features, tokens.shape[0], axis=0)
        return forward(params, config, feats, tokens)[:, -1]

    return step


def decode(
    params: dict,
    model_config: ModelConfig,
    features: np.ndarray,
    config: DecodeConfig,
    bos_id: int,
    eos_id: int,
) -> DecodeResult:
    """Generate a caption for one feature vector."""
    if config.max_len > model_config.max_len - 1:
        raise ValueError(
            f"decode max_len {config.max_len} exceeds model budget {model_config.max_len - 1}"
        )
    return decode_steps(model_step(params, model_config, features), config, bos_id, eos_id)


def decode_scenes(
    params: dict,
    model_config: ModelConfig,
    scene_features: list[tuple[int, np.ndarray]],
    config: DecodeConfig,
    bos_id: int,
    eos_id: int,
) -> dict[int, DecodeResult]:
    """Decode one caption per (scene_id, features) entry."""
    return {
        scene_id: decode(params, model_config, feats, config, bos_id, eos_id)
        for scene_id, feats in scene_features
    }
