"""Teacher-forcing training loop with checkpoint selection and two stages.

Stage one fits the model with the full-vocabulary objective until the
validation loss plateaus; stage two continues from that checkpoint under a
subset-restricted (or mixed) objective. Every epoch is evaluated end to end
(decode the validation scenes, score retrieval/length/diversity/precision/
perplexity) and the checkpoint maximizing the configured metric is returned.

Runs are bit-reproducible for a fixed (seed, config, corpus): shuffling,
random-subset draws, and evaluation all derive from seeded generators.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from . import objectives
from .corpus import Sample, Vocabulary
from .decoder import DecodeConfig
from .evaluation import (
    BigramModel,
    EvalReport,
    RetrievalPool,
    descriptiveness_report,
    pool_from_samples,
)

OBJECTIVES = ("mle", "smile", "reverse", "random", "mixed")

METRIC_COLUMNS = [
    "epoch",
    "train_loss",
    "val_loss",
    "mean_caption_length",
    "lexical_diversity",
    "r_at_1",
    "r_at_5",
    "oracle_precision",
    "ppl_proxy",
]


@dataclass
class TrainConfig:
    objective: str = "mle"
    lambda_mix: float = 0.5        # only read when objective == "mixed"
    first_token: str = "mle"       # none | mle | shift
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 3e-4
    optimizer: str = "adam"        # adam | sgd
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_metric: str = "val_retrieval_r1"  # or val_loss
    random_k: int = 10
    clip_norm: float = 5.0
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def __post_init__(self) -> None:
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.first_token not in objectives.FIRST_TOKEN_MODES:
            raise ValueError(f"unknown first_token mode {self.first_token!r}")
        if self.checkpoint_metric not in ("val_retrieval_r1", "val_loss"):
            raise ValueError(f"unknown checkpoint_metric {self.checkpoint_metric!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # learning_rate == 0 is allowed: a null update is a useful control
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 <= self.lambda_mix <= 1.0):
            raise ValueError("lambda_mix must be in [0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class RunMetrics:
    epoch: int
    train_loss: float
    val_loss: float
    mean_caption_length: float
    lexical_diversity: int
    r_at_1: float
    r_at_5: float
    oracle_precision: float
    ppl_proxy: float

    def as_row(self) -> list:
        return [getattr(self, col) for col in METRIC_COLUMNS]


@dataclass
class TrainResult:
    best_params: dict[str, np.ndarray]
    final_params: dict[str, np.ndarray]
    history: list[RunMetrics]
    best_epoch: int
    aborted: bool = False


def split_samples(samples: list[Sample]) -> tuple[list[Sample], list[Sample]]:
    """Hold out ~10% of scenes for validation (scene_id % 10 == 0).

    The rule is a function of the corpus alone, so both training stages see
    the same split regardless of their seeds.
    """
    train = [s for s in samples if s.scene_id % 10 != 0]
    val = [s for s in samples if s.scene_id % 10 == 0]
    return train, val


def _batches(samples: list[Sample], batch_size: int, order: np.ndarray):
    for start in range(0, len(order), batch_size):
        yield [samples[i] for i in order[start : start + batch_size]]


def _pack(batch: list[Sample], vocab: Vocabulary):
    """Teacher-forcing arrays: inputs caption[:-1], labels caption[1:]."""
    width = max(len(s.caption) for s in batch) - 1
    b = len(batch)
    tokens = np.full((b, width), vocab.pad_id, dtype=np.int64)
    labels = np.full((b, width), vocab.pad_id, dtype=np.int64)
    feats = np.zeros((b, len(batch[0].features)), dtype=np.float64)
    valid = np.zeros((b, width), dtype=bool)
    for i, s in enumerate(batch):
        n = len(s.caption) - 1
        tokens[i, :n] = s.caption[:-1]
        labels[i, :n] = s.caption[1:]
        valid[i, :n] = True
        feats[i] = s.features
    return feats, tokens, labels, valid


def _objective_loss(cfg: TrainConfig, vocab: Vocabulary, logits, labels, valid, rng):
    """Loss + logits gradient for the configured objective."""
    if cfg.first_token == "shift" and cfg.objective != "mle":
        labels, _ = objectives.apply_first_token_shift(labels, vocab)
    if cfg.objective == "mle":
        report, grad = objectives.mle_loss(logits, labels, valid)
    elif cfg.objective == "mixed":
        mask = objectives.build_mask(
            labels, len(vocab), "smile", cfg.first_token, rng, valid, cfg.random_k
        )
        report, grad = objectives.mixed_loss(logits, labels, mask, cfg.lambda_mix, valid)
    else:
        mask = objectives.build_mask(
            labels, len(vocab), cfg.objective, cfg.first_token, rng, valid, cfg.random_k
        )
        report, grad = objectives.smile_loss(logits, labels, mask, valid)
    return report, grad


class _Adam:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        c = self.cfg
        self.t += 1
        b1c = 1.0 - c.adam_beta1**self.t
        b2c = 1.0 - c.adam_beta2**self.t
        for k, g in grads.items():
            self.m[k] = c.adam_beta1 * self.m[k] + (1 - c.adam_beta1) * g
            self.v[k] = c.adam_beta2 * self.v[k] + (1 - c.adam_beta2) * g * g
            mhat = self.m[k] / b1c
            vhat = self.v[k] / b2c
            params[k] -= c.learning_rate * mhat / (np.sqrt(vhat) + c.adam_eps)


class _SGD:
    def __init__(self, cfg: TrainConfig, params):
        self.cfg = cfg

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] -= self.cfg.learning_rate * g


def _clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    total = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def _val_loss(cfg, model_cfg, vocab, params, val_samples, epoch):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch, 0xE7A1]))
    order = np.arange(len(val_samples))
    loss_sum = 0.0
    n = 0
    for batch in _batches(val_samples, cfg.batch_size, order):
        feats, tokens, labels, valid = _pack(batch, vocab)
        logits = model_mod.forward(params, model_cfg, feats, tokens)
        report, _ = _objective_loss(cfg, vocab, logits, labels, valid, rng)
        k = int(valid.sum())
        loss_sum += report.total * k
        n += k
    return loss_sum / max(n, 1)


def _metric_value(cfg: TrainConfig, row: RunMetrics) -> float:
    # normalized so that bigger is always better
    if cfg.checkpoint_metric == "val_retrieval_r1":
        return row.r_at_1
    return -row.val_loss


def evaluate_epoch(
    params,
    model_cfg,
    vocab,
    val_samples,
    pool: RetrievalPool,
    decode_cfg: DecodeConfig,
    bigram: BigramModel,
) -> EvalReport:
    return descriptiveness_report(
        params, model_cfg, vocab, val_samples, pool, decode_cfg, bigram
    )


def train(
    params: dict[str, np.ndarray],
    model_cfg: model_mod.ModelConfig,
    vocab: Vocabulary,
    samples: list[Sample],
    cfg: TrainConfig,
    early_stop_patience: int | None = None,
    plateau_rel: float = 0.01,
) -> TrainResult:
    """Train from the given parameters and return the best checkpoint.

    Aborts on a non-finite loss, returning the last finite-loss epoch's
    parameters. With ``early_stop_patience`` set, stops once the validation
    loss has gone ``patience`` consecutive epochs without a ``plateau_rel``
    relative improvement.
    """
    train_samples, val_samples = split_samples(samples)
    if not train_samples or not val_samples:
        raise ValueError("corpus too small to split into train/val")
    if len(vocab) != model_cfg.vocab_size:
        raise ValueError("corpus vocabulary does not match model vocab_size")

    params = {k: v.copy() for k, v in params.items()}
    opt = (_Adam if cfg.optimizer == "adam" else _SGD)(cfg, params)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7EA0]))

    pool = pool_from_samples(val_samples)
    bigram = BigramModel(len(vocab)).fit([s.caption for s in val_samples])

    history: list[RunMetrics] = []
    best_value = -np.inf
    best_epoch = -1
    best_params = {k: v.copy() for k, v in params.items()}
    last_good = {k: v.copy() for k, v in params.items()}
    best_val_loss = np.inf
    stale = 0
    aborted = False

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_samples))
        loss_sum = 0.0
        n_tokens = 0
        for batch in _batches(train_samples, cfg.batch_size, order):
            feats, tokens, labels, valid = _pack(batch, vocab)
            logits, tape = model_mod.forward_tape(params, model_cfg, feats, tokens)
            if not np.isfinite(logits).all():
                aborted = True
                break
            report, dlogits = _objective_loss(cfg, vocab, logits, labels, valid, rng)
            if not np.isfinite(report.total):
                aborted = True
                break
            grads = model_mod.backward(tape, dlogits)
            _clip(grads, cfg.clip_norm)
            opt.step(params, grads)
            k = int(valid.sum())
            loss_sum += report.total * k
            n_tokens += k
        if aborted:
            break

        train_loss = loss_sum / max(n_tokens, 1)
        val_loss = _val_loss(cfg, model_cfg, vocab, params, val_samples, epoch)
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            aborted = True
            break
        report = evaluate_epoch(params, model_cfg, vocab, val_samples, pool, cfg.decode, bigram)
        row = RunMetrics(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            mean_caption_length=report.mean_caption_length,
            lexical_diversity=report.lexical_diversity,
            r_at_1=report.r_at_1,
            r_at_5=report.r_at_5,
            oracle_precision=report.oracle_precision,
            ppl_proxy=report.ppl_proxy,
        )
        history.append(row)
        last_good = {k: v.copy() for k, v in params.items()}

        value = _metric_value(cfg, row)
        if value > best_value:
            best_value = value
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}

        if early_stop_patience is not None:
            if val_loss < best_val_loss * (1.0 - plateau_rel):
                best_val_loss = val_loss
                stale = 0
            else:
                stale += 1
                if stale >= early_stop_patience:
                    break

    if aborted:
        return TrainResult(
            best_params=last_good,
            final_params=last_good,
            history=history,
            best_epoch=best_epoch if best_epoch > 0 else 0,
            aborted=True,
        )
    return TrainResult(
        best_params=best_params,
        final_params=params,
        history=history,
        best_epoch=best_epoch,
        aborted=False,
    )


@dataclass
class TwoStageResult:
    base_params: dict[str, np.ndarray]
    further_params: dict[str, np.ndarray]
    base_history: list[RunMetrics]
    further_history: list[RunMetrics]
    base_result: TrainResult
    further_result: TrainResult


def two_stage(
    model_cfg: model_mod.ModelConfig,
    vocab: Vocabulary,
    samples: list[Sample],
    base_cfg: TrainConfig,
    further_cfg: TrainConfig,
    init_params: dict[str, np.ndarray] | None = None,
    patience: int = 3,
) -> TwoStageResult:
    """Full-vocabulary pretraining to plateau, then further training.

    Stage one must use the plain objective: further training only makes
    sense from a model whose basic captioning already works.
    """
    if base_cfg.objective != "mle":
        raise ValueError("two_stage base objective must be 'mle'")
    if init_params is None:
        init_params = model_mod.init_params(model_cfg)
    base = train(
        init_params, model_cfg, vocab, samples, base_cfg, early_stop_patience=patience
    )
    further = train(base.best_params, model_cfg, vocab, samples, further_cfg)
    return TwoStageResult(
        base_params=base.best_params,
        further_params=further.best_params,
        base_history=base.history,
        further_history=further.history,
        base_result=base,
        further_result=further,
    )


def write_metrics_csv(history: list[RunMetrics], path, baseline: RunMetrics | None = None) -> None:
    """One row per epoch, fixed column order; floats keep full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        rows = ([baseline.as_row()] if baseline is not None else []) + [
            r.as_row() for r in history
        ]
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def read_metrics_csv(path) -> list[RunMetrics]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            out.append(
                RunMetrics(
                    epoch=int(rec["epoch"]),
                    train_loss=float(rec["train_loss"]),
                    val_loss=float(rec["val_loss"]),
                    mean_caption_length=float(rec["mean_caption_length"]),
                    lexical_diversity=int(rec["lexical_diversity"]),
                    r_at_1=float(rec["r_at_1"]),
                    r_at_5=float(rec["r_at_5"]),
                    oracle_precision=float(rec["oracle_precision"]),
                    ppl_proxy=float(rec["ppl_proxy"]),
                )
            )
    return out
