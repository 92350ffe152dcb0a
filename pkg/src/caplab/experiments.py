"""Preset experiments: pretrain once, further-train variants, write CSVs.

Each preset resolves its full configuration up front, records it in a
manifest, and derives every random draw from the manifest's seed, so a rerun
from the same manifest reproduces the metrics files byte for byte.
"""

from __future__ import annotations

import json
import math
import os

from . import model as model_mod
from .corpus import CorpusConfig, Sample, Vocabulary, generate_corpus
from .decoder import DecodeConfig
from .evaluation import BigramModel, pool_from_samples
from .trainer import (
    RunMetrics,
    TrainConfig,
    TrainResult,
    evaluate_epoch,
    split_samples,
    train,
    write_metrics_csv,
)

MANIFEST_SCHEMA = "run_v1"
PRESET_NAMES = ("subsetting_compare", "absorption", "lambda_sweep", "icr_ablation")
LAMBDA_GRID = (1.0, 0.5, 0.1, 0.05, 0.01, 0.0)

# Mixed-detail corpus used by every preset except absorption. The skew keeps
# the pretrained model's modal caption mid-length, leaving headroom both to
# grow (subset objective) and to shrink (reverse).
DETAIL_DISTRIBUTION = (0.2, 0.45, 0.2, 0.15)

DEFAULTS = {
    "scenes": 500,
    "base_epochs": 60,        # upper bound; plateau stopping usually cuts it
    "further_epochs": 3,
    "absorption_epochs": 12,
    "batch_size": 32,
    "learning_rate": 3e-4,
    "further_learning_rate": 1e-3,
    "d_model": 64,
    "n_layers": 2,
    "n_heads": 4,
    "max_len": 32,
    "beam_width": 3,
    "decode_max_len": 24,
    "length_penalty": 1.0,
    "random_k": 10,
}


def resolve_params(seed: int, overrides: dict) -> dict:
    unknown = set(overrides) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown experiment parameters: {sorted(unknown)}")
    params = dict(DEFAULTS)
    params.update({k: v for k, v in overrides.items() if v is not None})
    params["seed"] = seed
    return params


def _decode_config(p: dict) -> DecodeConfig:
    return DecodeConfig(
        mode="beam",
        beam_width=p["beam_width"],
        max_len=p["decode_max_len"],
        length_penalty=p["length_penalty"],
    )


def _model_config(p: dict, vocab: Vocabulary) -> model_mod.ModelConfig:
    return model_mod.ModelConfig(
        vocab_size=len(vocab),
        feature_dim=vocab.n_concepts,
        d_model=p["d_model"],
        n_layers=p["n_layers"],
        n_heads=p["n_heads"],
        max_len=p["max_len"],
        seed=p["seed"],
    )


def _base_config(p: dict) -> TrainConfig:
    return TrainConfig(
        objective="mle",
        epochs=p["base_epochs"],
        batch_size=p["batch_size"],
        learning_rate=p["learning_rate"],
        seed=p["seed"],
        checkpoint_metric="val_loss",
        decode=_decode_config(p),
    )


def _further_config(p: dict, objective: str, first_token: str = "mle", lam: float = 0.5,
                    epochs: int | None = None) -> TrainConfig:
    return TrainConfig(
        objective=objective,
        lambda_mix=lam,
        first_token=first_token,
        epochs=epochs if epochs is not None else p["further_epochs"],
        batch_size=p["batch_size"],
        learning_rate=p["further_learning_rate"],
        seed=p["seed"],
        checkpoint_metric="val_retrieval_r1",
        random_k=p["random_k"],
        decode=_decode_config(p),
    )


def _mixed_corpus_config(p: dict) -> CorpusConfig:
    return CorpusConfig(
        seed=p["seed"],
        n_scenes=p["scenes"],
        mode="full",
        detail_distribution=DETAIL_DISTRIBUTION,
    )


def baseline_metrics(params, model_cfg, vocab, samples, decode_cfg) -> RunMetrics:
    """Epoch-0 row: evaluate a checkpoint on the validation split as-is."""
    _, val = split_samples(samples)
    pool = pool_from_samples(val)
    bigram = BigramModel(len(vocab)).fit([s.caption for s in val])
    report = evaluate_epoch(params, model_cfg, vocab, val, pool, decode_cfg, bigram)
    return RunMetrics(
        epoch=0,
        train_loss=math.nan,
        val_loss=math.nan,
        mean_caption_length=report.mean_caption_length,
        lexical_diversity=report.lexical_diversity,
        r_at_1=report.r_at_1,
        r_at_5=report.r_at_5,
        oracle_precision=report.oracle_precision,
        ppl_proxy=report.ppl_proxy,
    )


def ground_truth_mean_length(samples: list[Sample], vocab: Vocabulary) -> float:
    from .evaluation import mean_caption_length

    per_scene: dict[int, list[int]] = {}
    for s in samples:
        per_scene.setdefault(s.scene_id, s.caption)
    return mean_caption_length(per_scene, vocab)


def pretrain_mixed(p: dict):
    """Corpus + plateau-stopped full-vocabulary pretraining for a param set."""
    vocab, samples, _ = generate_corpus(_mixed_corpus_config(p))
    model_cfg = _model_config(p, vocab)
    base = two_stage_stage1(p, model_cfg, vocab, samples)
    return vocab, samples, model_cfg, base


def two_stage_stage1(p: dict, model_cfg, vocab, samples) -> TrainResult:
    return train(
        model_mod.init_params(model_cfg),
        model_cfg,
        vocab,
        samples,
        _base_config(p),
        early_stop_patience=3,
    )


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in row])


def write_manifest(out_dir: str, preset: str, params: dict, outputs: list[str]) -> None:
    payload = {
        "schema": MANIFEST_SCHEMA,
        "preset": preset,
        "params": params,
        "outputs": outputs,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def run_subsetting_compare(out_dir: str, seed: int = 0, **overrides) -> dict:
    """Further-train one pretrained checkpoint under each subset strategy."""
    p = resolve_params(seed, overrides)
    os.makedirs(out_dir, exist_ok=True)
    vocab, samples, model_cfg, base = pretrain_mixed(p)
    decode_cfg = _decode_config(p)
    base_row = baseline_metrics(base.best_params, model_cfg, vocab, samples, decode_cfg)

    outputs = []
    summary_rows = []
    for arm in ("smile", "reverse", "random"):
        cfg = _further_config(p, arm)
        result = train(base.best_params, model_cfg, vocab, samples, cfg)
        arm_csv = f"{arm}.csv"
        write_metrics_csv(result.history, os.path.join(out_dir, arm_csv), baseline=base_row)
        outputs.append(arm_csv)
        final = result.history[-1]
        summary_rows.append(
            [
                arm,
                base_row.mean_caption_length,
                final.mean_caption_length,
                final.mean_caption_length / base_row.mean_caption_length,
                final.r_at_1,
                final.oracle_precision,
            ]
        )
    _write_csv(
        os.path.join(out_dir, "summary.csv"),
        ["arm", "baseline_length", "final_length", "length_ratio", "r_at_1", "oracle_precision"],
        summary_rows,
    )
    outputs.append("summary.csv")
    write_manifest(out_dir, "subsetting_compare", p, outputs)
    return {"baseline": base_row, "summary": summary_rows}


def run_absorption(out_dir: str, seed: int = 0, **overrides) -> dict:
    """Pretrain and further-train on the two reduced-detail corpora."""
    p = resolve_params(seed, overrides)
    os.makedirs(out_dir, exist_ok=True)
    decode_cfg = _decode_config(p)

    outputs = []
    summary_rows = []
    for mode in ("simplest", "simpler"):
        corpus_cfg = CorpusConfig(seed=p["seed"], n_scenes=p["scenes"], mode=mode)
        vocab, samples, _ = generate_corpus(corpus_cfg)
        model_cfg = _model_config(p, vocab)
        base = two_stage_stage1(p, model_cfg, vocab, samples)
        further_cfg = _further_config(p, "smile", epochs=p["absorption_epochs"])
        result = train(base.best_params, model_cfg, vocab, samples, further_cfg)

        base_row = baseline_metrics(base.best_params, model_cfg, vocab, samples, decode_cfg)
        mode_csv = f"{mode}.csv"
        write_metrics_csv(result.history, os.path.join(out_dir, mode_csv), baseline=base_row)
        outputs.append(mode_csv)

        _, val = split_samples(samples)
        gt_len = ground_truth_mean_length(val, vocab)
        final = result.history[-1]
        summary_rows.append(
            [
                mode,
                gt_len,
                base_row.mean_caption_length,
                final.mean_caption_length,
                final.mean_caption_length / gt_len,
            ]
        )
    _write_csv(
        os.path.join(out_dir, "summary.csv"),
        ["mode", "gt_length", "base_length", "further_length", "ratio_vs_gt"],
        summary_rows,
    )
    outputs.append("summary.csv")
    write_manifest(out_dir, "absorption", p, outputs)
    return {"summary": summary_rows}


def run_lambda_sweep(out_dir: str, seed: int = 0, **overrides) -> dict:
    """Further-train one checkpoint at each objective mixing weight."""
    p = resolve_params(seed, overrides)
    os.makedirs(out_dir, exist_ok=True)
    vocab, samples, model_cfg, base = pretrain_mixed(p)

    outputs = []
    rows = []
    for lam in LAMBDA_GRID:
        cfg = _further_config(p, "mixed", lam=lam)
        result = train(base.best_params, model_cfg, vocab, samples, cfg)
        final = result.history[-1]
        best_r1 = max(r.r_at_1 for r in result.history)
        rows.append(
            [
                lam,
                final.mean_caption_length,
                final.lexical_diversity,
                final.r_at_1,
                final.r_at_5,
                final.oracle_precision,
                final.ppl_proxy,
                best_r1,
            ]
        )
        arm_csv = f"lambda_{lam}.csv"
        write_metrics_csv(result.history, os.path.join(out_dir, arm_csv))
        outputs.append(arm_csv)
    _write_csv(
        os.path.join(out_dir, "sweep.csv"),
        [
            "lambda",
            "mean_caption_length",
            "lexical_diversity",
            "r_at_1",
            "r_at_5",
            "oracle_precision",
            "ppl_proxy",
            "best_r_at_1",
        ],
        rows,
    )
    outputs.append("sweep.csv")
    write_manifest(out_dir, "lambda_sweep", p, outputs)
    return {"rows": rows}


def run_icr_ablation(out_dir: str, seed: int = 0, **overrides) -> dict:
    """Compare first-token strategies under the subset objective."""
    p = resolve_params(seed, overrides)
    os.makedirs(out_dir, exist_ok=True)
    vocab, samples, model_cfg, base = pretrain_mixed(p)

    outputs = []
    rows = []
    for first_token in ("none", "mle", "shift"):
        cfg = _further_config(p, "smile", first_token=first_token)
        result = train(base.best_params, model_cfg, vocab, samples, cfg)
        best_r1 = max(r.r_at_1 for r in result.history)
        final = result.history[-1]
        rows.append(
            [
                first_token,
                best_r1,
                final.r_at_1,
                final.mean_caption_length,
                final.lexical_diversity,
                final.oracle_precision,
            ]
        )
        arm_csv = f"icr_{first_token}.csv"
        write_metrics_csv(result.history, os.path.join(out_dir, arm_csv))
        outputs.append(arm_csv)
    _write_csv(
        os.path.join(out_dir, "icr.csv"),
        ["first_token", "best_r_at_1", "final_r_at_1", "final_length", "lexical_diversity", "oracle_precision"],
        rows,
    )
    outputs.append("icr.csv")
    write_manifest(out_dir, "icr_ablation", p, outputs)
    return {"rows": rows}


RUNNERS = {
    "subsetting_compare": run_subsetting_compare,
    "absorption": run_absorption,
    "lambda_sweep": run_lambda_sweep,
    "icr_ablation": run_icr_ablation,
}


def run_preset(name: str, out_dir: str, seed: int = 0, **overrides) -> dict:
    if name not in RUNNERS:
        raise ValueError(f"unknown preset {name!r}, expected one of {PRESET_NAMES}")
    return RUNNERS[name](out_dir, seed=seed, **overrides)


def rerun_manifest(manifest_path: str, out_dir: str) -> dict:
    """Reproduce a run directory from its manifest alone."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unsupported manifest schema {manifest.get('schema')!r}")
    params = dict(manifest["params"])
    seed = params.pop("seed")
    return run_preset(manifest["preset"], out_dir, seed=seed, **params)
