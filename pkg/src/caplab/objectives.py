"""Training objectives: full and subset-restricted softmax cross-entropy.

All losses are pure functions from (logits, labels, masks) to a LossReport
plus the exact closed-form gradient on the logits. The restricted loss
normalizes the softmax over an admitted subset of the vocabulary only; a
token outside the subset contributes nothing to the denominator, so neither
the loss value nor any gradient entry reacts to its logit. Admitted tokens
compete with the label as usual. This one-way sensitivity is what lengthens
generations: penalties that would push the model from a detailed prediction
back toward a concise label are blocked, while penalties pushing it toward a
more detailed label pass through.

Subset strategies:

    full      every token admitted (reduces to plain cross-entropy)
    smile     tokens occurring anywhere in the sequence's label sequence
    reverse   complement of the sequence's token set, plus the current label
    random    K tokens drawn uniformly per sequence, plus the current label

First-token handling: ``mle`` admits the full vocabulary at the first
prediction position; ``shift`` replaces the first label with its rare alias
(see apply_first_token_shift) before masks are built.

Reduction is the mean over non-PAD positions across the batch, so the loss
scale does not depend on caption length.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary

STRATEGIES = ("full", "smile", "reverse", "random")
FIRST_TOKEN_MODES = ("none", "mle", "shift")
DEFAULT_RANDOM_K = 10


@dataclass
class SubsetMask:
    """Per-sequence, per-position admission mask over the vocabulary.

    Invariants: every valid position admits its own label; PAD positions
    admit everything (they are excluded from the loss anyway).
    """

    admit: np.ndarray  # bool [B, T, V]
    strategy: str
    first_token: str


@dataclass
class LossReport:
    total: float              # mean over non-PAD positions
    per_token: np.ndarray     # [B, T], zero at PAD positions
    per_token_probs: np.ndarray | None = None  # [B, T, V] admitted softmax

    def as_dict(self) -> dict:
        return {"total": self.total, "per_token": self.per_token.tolist()}


def _valid_mask(labels: np.ndarray, valid: np.ndarray | None) -> np.ndarray:
    if valid is None:
        return np.ones(labels.shape, dtype=bool)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != labels.shape:
        raise ValueError("valid mask shape must match labels")
    return valid


def build_mask(
    labels: np.ndarray,
    vocab_size: int,
    strategy: str = "smile",
    first_token: str = "mle",
    rng: np.random.Generator | None = None,
    valid: np.ndarray | None = None,
    random_k: int = DEFAULT_RANDOM_K,
) -> SubsetMask:
    """Build the admission mask for a batch of label sequences.

    ``random`` draws ``random_k`` distinct tokens uniformly from the whole
    vocabulary once per sequence (resampled on every call), so masks change
    step to step during training.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if first_token not in FIRST_TOKEN_MODES:
        raise ValueError(f"unknown first_token mode {first_token!r}")
    labels = np.asarray(labels)
    valid = _valid_mask(labels, valid)
    b, t = labels.shape

    admit = np.zeros((b, t, vocab_size), dtype=bool)
    if strategy == "full":
        admit[:] = True
    else:
        for i in range(b):
            seq = np.unique(labels[i][valid[i]])
            if strategy == "smile":
                admit[i, :, seq] = True
            elif strategy == "reverse":
                admit[i] = True
                admit[i, :, seq] = False
            else:  # random
                if rng is None:
                    raise ValueError("random strategy needs an rng")
                draw = rng.choice(vocab_size, size=min(random_k, vocab_size), replace=False)
                admit[i, :, draw] = True
        rows = np.arange(t)
        for i in range(b):
            admit[i, rows, labels[i]] = True
            admit[i, ~valid[i], :] = True
    if first_token == "mle":
        admit[:, 0, :] = True
    return SubsetMask(admit=admit, strategy=strategy, first_token=first_token)


def _masked_cross_entropy(
    logits: np.ndarray,
    labels: np.ndarray,
    admit: np.ndarray,
    valid: np.ndarray,
    want_probs: bool,
) -> tuple[LossReport, np.ndarray]:
    """Cross-entropy with the softmax restricted to admitted tokens.

    Max subtraction over the admitted set keeps the exponentials stable;
    non-admitted entries contribute exactly 0 to the denominator, so both
    the loss and its gradient are bitwise insensitive to their logits.
    """
    if not np.isfinite(logits).all():
        raise ValueError("non-finite logits")
    b, t, v = logits.shape
    if labels.shape != (b, t):
        raise ValueError("labels shape must match logits batch/positions")

    label_onehot_admitted = np.take_along_axis(admit, labels[..., None], axis=-1)[..., 0]
    if not label_onehot_admitted[valid].all():
        raise ValueError("mask does not admit a label token")

    masked = np.where(admit, logits, -np.inf)
    m = masked.max(axis=-1, keepdims=True)
    e = np.exp(masked - m)  # exp(-inf) == 0 exactly: blocked tokens vanish
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    lse = m[..., 0] + np.log(s[..., 0])
    z_label = np.take_along_axis(logits, labels[..., None], axis=-1)[..., 0]

    per_token = np.where(valid, lse - z_label, 0.0)
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("no valid (non-PAD) positions")
    total = float(per_token.sum() / n_valid)

    grad = probs.copy()
    rows = np.arange(t)
    for i in range(b):
        grad[i, rows, labels[i]] -= 1.0
    grad *= valid[..., None] / n_valid

    report = LossReport(
        total=total,
        per_token=per_token,
        per_token_probs=probs if want_probs else None,
    )
    return report, grad


def mle_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    valid: np.ndarray | None = None,
    want_probs: bool = False,
) -> tuple[LossReport, np.ndarray]:
    """Cross-entropy over the full vocabulary; gradient = softmax - onehot."""
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    valid = _valid_mask(labels, valid)
    admit = np.ones(logits.shape, dtype=bool)
    return _masked_cross_entropy(logits, labels, admit, valid, want_probs)


def smile_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    mask: SubsetMask,
    valid: np.ndarray | None = None,
    want_probs: bool = False,
) -> tuple[LossReport, np.ndarray]:
    """Cross-entropy restricted to the admitted subset.

    Raises if the mask fails to admit some valid position's label (contract
    violation: the restricted probability of the label would be undefined).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    valid = _valid_mask(labels, valid)
    if mask.admit.shape != logits.shape:
        raise ValueError("mask shape must match logits")
    return _masked_cross_entropy(logits, labels, mask.admit, valid, want_probs)


def mixed_loss(
    logits: np.ndarray,
    labels: np.ndarray,
    mask: SubsetMask,
    lam: float,
    valid: np.ndarray | None = None,
) -> tuple[LossReport, np.ndarray]:
    """Convex combination: lam * full-vocabulary CE + (1 - lam) * restricted CE."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError(f"mixing weight must be in [0, 1], got {lam}")
    full_report, full_grad = mle_loss(logits, labels, valid)
    sub_report, sub_grad = smile_loss(logits, labels, mask, valid)
    report = LossReport(
        total=lam * full_report.total + (1.0 - lam) * sub_report.total,
        per_token=lam * full_report.per_token + (1.0 - lam) * sub_report.per_token,
    )
    return report, lam * full_grad + (1.0 - lam) * sub_grad


def apply_first_token_shift(
    labels: np.ndarray, vocab: Vocabulary
) -> tuple[np.ndarray, np.ndarray]:
    """Replace each sequence's first label with its rare alias.

    The alias never occurs at sequence start in training data, so the model
    keeps getting penalized at the first position even under the restricted
    softmax, while the original token's logit (usually outside the shifted
    subset) is left untouched. Sequences whose first label has no alias are
    returned unchanged and flagged.

    Returns (shifted labels, flag vector: True where no alias applied).
    """
    labels = np.asarray(labels)
    shifted = labels.copy()
    unshifted = np.zeros(labels.shape[0], dtype=bool)
    for i in range(labels.shape[0]):
        alias = vocab.rare_alias.get(int(labels[i, 0]))
        if alias is None:
            unshifted[i] = True
        else:
            shifted[i, 0] = alias
    return shifted, unshifted
