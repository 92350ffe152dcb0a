"""Command-line entry point: data generation, training, decoding, eval, viz,
and the preset experiments.

Every subcommand takes --seed and writes its outputs (plus a manifest
recording the resolved configuration) into a run directory. Option
precedence: explicit flag > --config JSON file > built-in default. The
default output root is $CAPLAB_OUT, falling back to ./runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import corpus as corpus_mod
from . import evaluation as eval_mod
from . import experiments
from . import model as model_mod
from . import objectives
from .decoder import DecodeConfig
from .trainer import TrainConfig, split_samples, train, write_metrics_csv


def _out_dir(args, command: str) -> str:
    if args.out:
        path = args.out
    else:
        root = os.environ.get("CAPLAB_OUT", "runs")
        path = os.path.join(root, f"{command}-seed{args.seed}")
    os.makedirs(path, exist_ok=True)
    return path


def _config_file_values(args) -> dict:
    path = getattr(args, "config", None)
    if not path:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise ValueError("config file must hold a JSON object")
    return values


def _resolve(args, name: str, default, cfg_values: dict):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in cfg_values:
        return cfg_values[name]
    return default


def _write_manifest(out_dir: str, command: str, params: dict, outputs: list[str]) -> None:
    payload = {
        "schema": experiments.MANIFEST_SCHEMA,
        "command": command,
        "params": params,
        "outputs": outputs,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)


def _load_corpus_dir(path: str):
    corpus_path = os.path.join(path, "corpus.jsonl")
    vocab_path = os.path.join(path, "vocab.json")
    for p in (corpus_path, vocab_path):
        if not os.path.exists(p):
            raise FileNotFoundError(p)
    vocab = corpus_mod.read_vocab(vocab_path)
    samples = corpus_mod.read_corpus(corpus_path)
    return vocab, samples


def _split(samples, which: str):
    tr, va = split_samples(samples)
    if which == "train":
        return tr
    if which == "val":
        return va
    return samples


def _load_checkpoint(path: str):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return model_mod.load_checkpoint(path)


# ── Subcommands ─────────────────────────────────────────────────────────

def cmd_gen_data(args) -> int:
    cfgv = _config_file_values(args)
    dist = _resolve(args, "detail_dist", None, cfgv)
    if isinstance(dist, str):
        dist = tuple(float(x) for x in dist.split(","))
    config = corpus_mod.CorpusConfig(
        seed=args.seed,
        n_scenes=_resolve(args, "scenes", 500, cfgv),
        mode=_resolve(args, "mode", "full", cfgv),
        detail_distribution=dist,
        paraphrases=_resolve(args, "paraphrases", 1, cfgv),
    )
    vocab, samples, _ = corpus_mod.generate_corpus(config)
    out = _out_dir(args, "gen-data")
    corpus_mod.write_corpus(samples, os.path.join(out, "corpus.jsonl"))
    corpus_mod.write_vocab(vocab, os.path.join(out, "vocab.json"))
    params = {
        "seed": config.seed,
        "n_scenes": config.n_scenes,
        "mode": config.mode,
        "detail_distribution": list(config.resolved_distribution()),
        "paraphrases": config.paraphrases,
    }
    _write_manifest(out, "gen-data", params, ["corpus.jsonl", "vocab.json"])
    print(out)
    return 0


def cmd_train(args) -> int:
    cfgv = _config_file_values(args)
    vocab, samples = _load_corpus_dir(args.corpus)
    cfg = TrainConfig(
        objective=_resolve(args, "objective", "mle", cfgv),
        lambda_mix=_resolve(args, "lambda_mix", 0.5, cfgv),
        first_token=_resolve(args, "first_token", "mle", cfgv),
        epochs=_resolve(args, "epochs", 10, cfgv),
        batch_size=_resolve(args, "batch_size", 32, cfgv),
        learning_rate=_resolve(args, "learning_rate", 3e-4, cfgv),
        seed=args.seed,
        checkpoint_metric=_resolve(args, "checkpoint_metric", "val_retrieval_r1", cfgv),
    )
    if args.init_checkpoint:
        model_cfg, params = _load_checkpoint(args.init_checkpoint)
        if model_cfg.vocab_size != len(vocab):
            raise ValueError("checkpoint vocabulary size does not match corpus")
    else:
        model_cfg = model_mod.ModelConfig(
            vocab_size=len(vocab),
            feature_dim=vocab.n_concepts,
            d_model=_resolve(args, "d_model", 64, cfgv),
            n_layers=_resolve(args, "n_layers", 2, cfgv),
            n_heads=_resolve(args, "n_heads", 4, cfgv),
            seed=args.seed,
        )
        params = model_mod.init_params(model_cfg)
    result = train(
        params,
        model_cfg,
        vocab,
        samples,
        cfg,
        early_stop_patience=args.patience,
    )
    out = _out_dir(args, "train")
    model_mod.save_checkpoint(os.path.join(out, "checkpoint.json"), model_cfg, result.best_params)
    write_metrics_csv(result.history, os.path.join(out, "metrics.csv"))
    params_rec = {
        "seed": args.seed,
        "corpus": os.path.abspath(args.corpus),
        "objective": cfg.objective,
        "lambda_mix": cfg.lambda_mix,
        "first_token": cfg.first_token,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "checkpoint_metric": cfg.checkpoint_metric,
        "init_checkpoint": args.init_checkpoint and os.path.abspath(args.init_checkpoint),
        "best_epoch": result.best_epoch,
        "aborted": result.aborted,
    }
    _write_manifest(out, "train", params_rec, ["checkpoint.json", "metrics.csv"])
    if result.aborted:
        print("warning: training aborted on non-finite loss; kept last good checkpoint", file=sys.stderr)
    print(out)
    return 0


def _decode_cfg_from(args, cfgv) -> DecodeConfig:
    return DecodeConfig(
        mode=_resolve(args, "mode", "beam", cfgv),
        beam_width=_resolve(args, "beam", 3, cfgv),
        max_len=_resolve(args, "max_len", 24, cfgv),
        length_penalty=_resolve(args, "length_penalty", 1.0, cfgv),
    )


def cmd_decode(args) -> int:
    cfgv = _config_file_values(args)
    vocab, samples = _load_corpus_dir(args.corpus)
    model_cfg, params = _load_checkpoint(args.checkpoint)
    decode_cfg = _decode_cfg_from(args, cfgv)
    subset = _split(samples, args.split)
    scene_feats: dict[int, np.ndarray] = {}
    for s in subset:
        scene_feats.setdefault(s.scene_id, s.features)
    out = _out_dir(args, "decode")
    out_path = os.path.join(out, "captions.jsonl")
    from .decoder import decode as decode_one

    with open(out_path, "w") as fh:
        for scene_id, feats in sorted(scene_feats.items()):
            res = decode_one(params, model_cfg, feats, decode_cfg, vocab.bos_id, vocab.eos_id)
            fh.write(
                json.dumps(
                    {
                        "scene_id": scene_id,
                        "tokens": res.tokens,
                        "text": corpus_mod.detokenize(res.tokens, vocab),
                        "finished": res.finished,
                    }
                )
            )
            fh.write("\n")
    _write_manifest(
        out,
        "decode",
        {
            "seed": args.seed,
            "corpus": os.path.abspath(args.corpus),
            "checkpoint": os.path.abspath(args.checkpoint),
            "split": args.split,
            "decode": {
                "mode": decode_cfg.mode,
                "beam_width": decode_cfg.beam_width,
                "max_len": decode_cfg.max_len,
                "length_penalty": decode_cfg.length_penalty,
            },
        },
        ["captions.jsonl"],
    )
    print(out)
    return 0


def cmd_eval(args) -> int:
    cfgv = _config_file_values(args)
    vocab, samples = _load_corpus_dir(args.corpus)
    model_cfg, params = _load_checkpoint(args.checkpoint)
    decode_cfg = _decode_cfg_from(args, cfgv)
    subset = _split(samples, args.split)
    pool = eval_mod.pool_from_samples(subset)
    n_distract = _resolve(args, "hard_distractors", 0, cfgv)
    if n_distract:
        corpus_manifest = os.path.join(args.corpus, "manifest.json")
        n_nouns, n_adjs = 30, 20
        if os.path.exists(corpus_manifest):
            with open(corpus_manifest) as fh:
                rec = json.load(fh)
            n_nouns = rec.get("params", {}).get("n_nouns", 30)
            n_adjs = rec.get("params", {}).get("n_adjectives", 20)
        rng = np.random.default_rng(args.seed)
        pool = eval_mod.add_hard_distractors(pool, (n_nouns, n_nouns + n_adjs), n_distract, rng)
    bigram = eval_mod.BigramModel(len(vocab)).fit([s.caption for s in subset])
    report = eval_mod.descriptiveness_report(
        params, model_cfg, vocab, subset, pool, decode_cfg, bigram
    )
    out = _out_dir(args, "eval")
    with open(os.path.join(out, "report.json"), "w") as fh:
        json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
    experiments._write_csv(
        os.path.join(out, "report.csv"),
        list(report.as_dict().keys()),
        [list(report.as_dict().values())],
    )
    _write_manifest(
        out,
        "eval",
        {
            "seed": args.seed,
            "corpus": os.path.abspath(args.corpus),
            "checkpoint": os.path.abspath(args.checkpoint),
            "split": args.split,
            "hard_distractors": n_distract,
        },
        ["report.json", "report.csv"],
    )
    print(json.dumps(report.as_dict(), sort_keys=True))
    return 0


def cmd_viz(args) -> int:
    vocab, samples = _load_corpus_dir(args.corpus)
    model_cfg, params = _load_checkpoint(args.checkpoint)
    if not (0 <= args.sample < len(samples)):
        raise ValueError(f"sample index {args.sample} outside corpus of {len(samples)}")
    sample = samples[args.sample]
    tokens = np.asarray([sample.caption[:-1]])
    labels = np.asarray([sample.caption[1:]])
    feats = np.asarray([sample.features], dtype=np.float64)
    logits = model_mod.forward(params, model_cfg, feats, tokens)
    mask = objectives.build_mask(
        labels, len(vocab), strategy=args.strategy, first_token=args.first_token,
        rng=np.random.default_rng(args.seed),
    )
    record = eval_mod.export_token_viz(
        logits[0], labels[0], mask, vocab, scene_id=sample.scene_id
    )
    out = _out_dir(args, "viz")
    eval_mod.write_viz(record, os.path.join(out, "viz.json"))
    _write_manifest(
        out,
        "viz",
        {
            "seed": args.seed,
            "corpus": os.path.abspath(args.corpus),
            "checkpoint": os.path.abspath(args.checkpoint),
            "sample": args.sample,
            "strategy": args.strategy,
            "first_token": args.first_token,
        },
        ["viz.json"],
    )
    print(out)
    return 0


def cmd_experiment(args) -> int:
    out = _out_dir(args, f"experiment-{args.name}")
    if args.from_manifest:
        if not os.path.exists(args.from_manifest):
            raise FileNotFoundError(args.from_manifest)
        experiments.rerun_manifest(args.from_manifest, out)
        print(out)
        return 0
    cfgv = _config_file_values(args)
    overrides = {}
    for key in experiments.DEFAULTS:
        value = _resolve(args, key, None, cfgv)
        if value is not None:
            overrides[key] = value
    experiments.run_preset(args.name, out, seed=args.seed, **overrides)
    print(out)
    return 0


# ── Parser ──────────────────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caplab",
        description="Desk-scale captioning lab for subset-restricted likelihood objectives.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None, help="run directory (default $CAPLAB_OUT/<cmd>-seed<seed>)")
        p.add_argument("--config", default=None, help="JSON file with option defaults")

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--mode", choices=corpus_mod.MODES, default=None)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--paraphrases", type=int, default=None)
    p.add_argument("--detail-dist", dest="detail_dist", default=None,
                   help="comma-separated probabilities for detail levels 0..3")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--objective", choices=("mle", "smile", "reverse", "random", "mixed"), default=None)
    p.add_argument("--lambda", dest="lambda_mix", type=float, default=None)
    p.add_argument("--first-token", dest="first_token", choices=objectives.FIRST_TOKEN_MODES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--checkpoint-metric", dest="checkpoint_metric",
                   choices=("val_retrieval_r1", "val_loss"), default=None)
    p.add_argument("--d-model", dest="d_model", type=int, default=None)
    p.add_argument("--n-layers", dest="n_layers", type=int, default=None)
    p.add_argument("--n-heads", dest="n_heads", type=int, default=None)
    p.add_argument("--init-checkpoint", default=None, help="continue from this checkpoint")
    p.add_argument("--patience", type=int, default=None, help="early-stop patience on val loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="generate captions with a checkpoint")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--mode", choices=("greedy", "beam"), default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--length-penalty", dest="length_penalty", type=float, default=None)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus split")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--hard-distractors", dest="hard_distractors", type=int, default=None,
                   help="near-duplicate pool entries per scene")
    p.add_argument("--mode", choices=("greedy", "beam"), default=None)
    p.add_argument("--beam", type=int, default=None)
    p.add_argument("--max-len", dest="max_len", type=int, default=None)
    p.add_argument("--length-penalty", dest="length_penalty", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="export token-level loss visualization JSON")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", type=int, required=True, help="sample index in the corpus")
    p.add_argument("--strategy", choices=objectives.STRATEGIES, default="smile")
    p.add_argument("--first-token", dest="first_token", choices=objectives.FIRST_TOKEN_MODES, default="mle")
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("experiment", help="run a preset experiment")
    common(p)
    p.add_argument("name", choices=experiments.PRESET_NAMES)
    p.add_argument("--from-manifest", dest="from_manifest", default=None,
                   help="reproduce a run from an existing manifest")
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--base-epochs", dest="base_epochs", type=int, default=None)
    p.add_argument("--further-epochs", dest="further_epochs", type=int, default=None)
    p.add_argument("--absorption-epochs", dest="absorption_epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
    p.add_argument("--further-learning-rate", dest="further_learning_rate", type=float, default=None)
    p.add_argument("--d-model", dest="d_model", type=int, default=None)
    p.add_argument("--n-layers", dest="n_layers", type=int, default=None)
    p.add_argument("--n-heads", dest="n_heads", type=int, default=None)
    p.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 1
    except (ValueError, corpus_mod.CorpusFormatError) as exc:
        print(f"error: invalid configuration or input: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
