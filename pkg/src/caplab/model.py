"""Conditional autoregressive decoder with exact reverse-mode gradients.

A small pre-norm causal self-attention stack over token embeddings, with the
scene's multi-hot feature vector projected to width and prepended as a
position-0 context token. ``forward(params, features, tokens)`` returns
logits aligned so that position t scores the token following ``tokens[t]``
(the context-token output is dropped). All arithmetic defaults to float64 so
gradient checks carry no tolerance ambiguity.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .autograd import Tensor, concat, embedding

INIT_SCALE = 0.02  # stddev of all normal-initialized weights


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    feature_dim: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_len: int = 32
    ffn_mult: int = 4
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size <= 0 or self.feature_dim <= 0:
            raise ValueError("vocab_size and feature_dim must be positive")
        if self.max_len < 2:
            raise ValueError("max_len must be at least 2")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32


def init_params(config: ModelConfig) -> dict[str, np.ndarray]:
    """Draw parameters deterministically from the config seed.

    Weights ~ N(0, INIT_SCALE^2), biases zero, layer-norm gains one.
    """
    rng = np.random.default_rng(config.seed)
    dt = config.np_dtype
    d, v, f = config.d_model, config.vocab_size, config.feature_dim
    h = config.ffn_mult * d

    def w(*shape):
        return (rng.normal(0.0, INIT_SCALE, size=shape)).astype(dt)

    params: dict[str, np.ndarray] = {
        "tok_emb": w(v, d),
        "pos_emb": w(config.max_len + 1, d),  # +1 for the feature token
        "feat_w": w(f, d),
        "feat_b": np.zeros(d, dtype=dt),
    }
    for i in range(config.n_layers):
        p = f"block{i}."
        params[p + "ln1_g"] = np.ones(d, dtype=dt)
        params[p + "ln1_b"] = np.zeros(d, dtype=dt)
        params[p + "attn_wqkv"] = w(d, 3 * d)
        params[p + "attn_bqkv"] = np.zeros(3 * d, dtype=dt)
        params[p + "attn_wo"] = w(d, d)
        params[p + "attn_bo"] = np.zeros(d, dtype=dt)
        params[p + "ln2_g"] = np.ones(d, dtype=dt)
        params[p + "ln2_b"] = np.zeros(d, dtype=dt)
        params[p + "mlp_w1"] = w(d, h)
        params[p + "mlp_b1"] = np.zeros(h, dtype=dt)
        params[p + "mlp_w2"] = w(h, d)
        params[p + "mlp_b2"] = np.zeros(d, dtype=dt)
    params["ln_f_g"] = np.ones(d, dtype=dt)
    params["ln_f_b"] = np.zeros(d, dtype=dt)
    params["out_w"] = w(d, v)
    params["out_b"] = np.zeros(v, dtype=dt)
    return params


def param_count(config: ModelConfig) -> int:
    """Closed-form parameter count implied by the config."""
    d, v, f = config.d_model, config.vocab_size, config.feature_dim
    h = config.ffn_mult * d
    per_block = (
        2 * d            # ln1
        + d * 3 * d + 3 * d  # qkv
        + d * d + d      # attn out
        + 2 * d          # ln2
        + d * h + h      # mlp in
        + h * d + d      # mlp out
    )
    return (
        v * d
        + (config.max_len + 1) * d
        + f * d + d
        + config.n_layers * per_block
        + 2 * d
        + d * v + v
    )


@dataclass
class Tape:
    """Recorded forward pass: graph root plus the named parameter leaves."""

    logits: Tensor
    params: dict[str, Tensor]


def _validate_inputs(config: ModelConfig, features: np.ndarray, tokens: np.ndarray) -> None:
    if tokens.ndim != 2 or features.ndim != 2:
        raise ValueError("expected batched features [B,F] and tokens [B,T]")
    if features.shape[0] != tokens.shape[0]:
        raise ValueError("features and tokens disagree on batch size")
    if features.shape[1] != config.feature_dim:
        raise ValueError(
            f"feature dim {features.shape[1]} != config.feature_dim {config.feature_dim}"
        )
    if tokens.shape[1] > config.max_len:
        raise ValueError(
            f"sequence length {tokens.shape[1]} overflows max_len {config.max_len}"
        )
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise ValueError("token id outside vocabulary")


def _run(params: dict[str, Tensor], config: ModelConfig, features: np.ndarray, tokens: np.ndarray) -> Tensor:
    b, t = tokens.shape
    dt = config.np_dtype
    s = t + 1  # feature token + t token positions

    feat = Tensor(features.astype(dt)).matmul(params["feat_w"]) + params["feat_b"]
    feat = feat.reshape(b, 1, config.d_model)
    tok = embedding(params["tok_emb"], tokens)
    x = concat([feat, tok], axis=1) + params["pos_emb"][:s]

    # causal bias: position i attends to positions <= i
    bias = np.triu(np.full((s, s), -np.inf, dtype=dt), k=1)

    dh = config.d_model // config.n_heads
    inv_sqrt = float(1.0 / np.sqrt(dh))
    for i in range(config.n_layers):
        p = f"block{i}."
        hn = x.layer_norm(params[p + "ln1_g"], params[p + "ln1_b"])
        qkv = hn.matmul(params[p + "attn_wqkv"]) + params[p + "attn_bqkv"]
        d = config.d_model
        q = qkv[:, :, :d].reshape(b, s, config.n_heads, dh).transpose(0, 2, 1, 3)
        k = qkv[:, :, d : 2 * d].reshape(b, s, config.n_heads, dh).transpose(0, 2, 1, 3)
        v = qkv[:, :, 2 * d :].reshape(b, s, config.n_heads, dh).transpose(0, 2, 1, 3)
        att = q.matmul(k.transpose(0, 1, 3, 2)) * inv_sqrt + bias
        ctx = att.softmax().matmul(v)
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, s, d)
        x = x + ctx.matmul(params[p + "attn_wo"]) + params[p + "attn_bo"]
        hn = x.layer_norm(params[p + "ln2_g"], params[p + "ln2_b"])
        ff = (hn.matmul(params[p + "mlp_w1"]) + params[p + "mlp_b1"]).gelu()
        x = x + ff.matmul(params[p + "mlp_w2"]) + params[p + "mlp_b2"]

    x = x.layer_norm(params["ln_f_g"], params["ln_f_b"])
    logits = x.matmul(params["out_w"]) + params["out_b"]
    return logits[:, 1:, :]  # drop the feature-token position


def _layer_norm_np(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)  # multiply, matching the recorded op exactly
    return (x - mu) * inv * g + b


def _softmax_np(z):
    m = z.max(axis=-1, keepdims=True)
    e = np.exp(z - m)
    return e / e.sum(axis=-1, keepdims=True)


def _gelu_np(x):
    c = float(np.sqrt(2.0 / np.pi))
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def forward(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    features: np.ndarray,
    tokens: np.ndarray,
) -> np.ndarray:
    """Logits [B, T, V]: position t scores the successor of tokens[:, t].

    Tape-free mirror of the recorded pass (same operations in the same
    order, so the two agree bitwise); use forward_tape + backward for
    gradients.
    """
    features = np.asarray(features)
    tokens = np.asarray(tokens)
    _validate_inputs(config, features, tokens)
    b, t = tokens.shape
    dt = config.np_dtype
    s = t + 1

    feat = features.astype(dt) @ params["feat_w"] + params["feat_b"]
    x = np.concatenate([feat[:, None, :], params["tok_emb"][tokens]], axis=1)
    x = x + params["pos_emb"][:s]
    bias = np.triu(np.full((s, s), -np.inf, dtype=dt), k=1)

    d = config.d_model
    dh = d // config.n_heads
    inv_sqrt = float(1.0 / np.sqrt(dh))  # python float: keeps float32 mode float32
    for i in range(config.n_layers):
        p = f"block{i}."
        hn = _layer_norm_np(x, params[p + "ln1_g"], params[p + "ln1_b"])
        qkv = hn @ params[p + "attn_wqkv"] + params[p + "attn_bqkv"]
        q = qkv[:, :, :d].reshape(b, s, config.n_heads, dh).transpose(0, 2, 1, 3)
        k = qkv[:, :, d : 2 * d].reshape(b, s, config.n_heads, dh).transpose(0, 2, 1, 3)
        v = qkv[:, :, 2 * d :].reshape(b, s, config.n_heads, dh).transpose(0, 2, 1, 3)
        att = q @ k.transpose(0, 1, 3, 2) * inv_sqrt + bias
        ctx = _softmax_np(att) @ v
        ctx = ctx.transpose(0, 2, 1, 3).reshape(b, s, d)
        x = x + ctx @ params[p + "attn_wo"] + params[p + "attn_bo"]
        hn = _layer_norm_np(x, params[p + "ln2_g"], params[p + "ln2_b"])
        ff = _gelu_np(hn @ params[p + "mlp_w1"] + params[p + "mlp_b1"])
        x = x + ff @ params[p + "mlp_w2"] + params[p + "mlp_b2"]

    x = _layer_norm_np(x, params["ln_f_g"], params["ln_f_b"])
    logits = x @ params["out_w"] + params["out_b"]
    return logits[:, 1:, :]


def forward_tape(
    params: dict[str, np.ndarray],
    config: ModelConfig,
    features: np.ndarray,
    tokens: np.ndarray,
) -> tuple[np.ndarray, Tape]:
    """Forward pass that records the graph for a later backward call."""
    features = np.asarray(features)
    tokens = np.asarray(tokens)
    _validate_inputs(config, features, tokens)
    leaves = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    out = _run(leaves, config, features, tokens)
    return out.data, Tape(logits=out, params=leaves)


def backward(tape: Tape, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """Exact parameter gradients for the recorded forward pass."""
    dlogits = np.asarray(dlogits)
    if dlogits.shape != tape.logits.data.shape:
        raise ValueError(
            f"upstream gradient shape {dlogits.shape} != logits shape {tape.logits.data.shape}"
        )
    for leaf in tape.params.values():
        leaf.grad = None
    tape.logits.backward(dlogits)
    return {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data))
        for name, leaf in tape.params.items()
    }


# ── Checkpoints ─────────────────────────────────────────────────────────

def save_checkpoint(path, config: ModelConfig, params: dict[str, np.ndarray]) -> None:
    """Self-describing JSON checkpoint; float64 round-trips bit-exactly."""
    payload = {
        "config": asdict(config),
        "params": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.items()
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path) as fh:
        payload = json.load(fh)
    config = ModelConfig(**payload["config"])
    params = {
        name: np.asarray(entry["data"], dtype=config.np_dtype).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
    return config, params
