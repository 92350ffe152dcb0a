"""Model contracts: determinism, causality, conditioning, exact gradients."""

import json
import os

import numpy as np
import pytest

from caplab.model import (
    ModelConfig,
    Tape,
    backward,
    forward,
    forward_tape,
    init_params,
    load_checkpoint,
    param_count,
    save_checkpoint,
)

GOLDEN_PATH = os.path.join(os.path.dirname(__file__), "golden", "forward_tiny.json")


@pytest.fixture
def tiny_config():
    return ModelConfig(
        vocab_size=12, feature_dim=6, d_model=8, n_layers=2, n_heads=2, max_len=8, seed=3
    )


@pytest.fixture
def tiny_inputs():
    rng = np.random.default_rng(17)
    feats = rng.random((2, 6))
    tokens = rng.integers(0, 12, size=(2, 5))
    return feats, tokens


class TestConfig:
    def test_heads_must_divide_width(self):
        with pytest.raises(ValueError, match="divisible"):
            ModelConfig(vocab_size=10, feature_dim=4, d_model=10, n_heads=3)

    def test_rejects_unknown_dtype(self):
        with pytest.raises(ValueError, match="dtype"):
            ModelConfig(vocab_size=10, feature_dim=4, dtype="float16")


class TestInit:
    def test_same_seed_identical(self, tiny_config):
        a = init_params(tiny_config)
        b = init_params(tiny_config)
        for k in a:
            np.testing.assert_array_equal(a[k], b[k])

    def test_different_seeds_differ(self, tiny_config):
        a = init_params(tiny_config)
        other = ModelConfig(
            vocab_size=12, feature_dim=6, d_model=8, n_layers=2, n_heads=2, max_len=8, seed=4
        )
        b = init_params(other)
        assert any(not np.array_equal(a[k], b[k]) for k in a)

    def test_parameter_count_closed_form(self, tiny_config):
        params = init_params(tiny_config)
        assert sum(p.size for p in params.values()) == param_count(tiny_config)

    def test_parameter_count_default_config(self):
        config = ModelConfig(vocab_size=66, feature_dim=60)
        params = init_params(config)
        assert sum(p.size for p in params.values()) == param_count(config)


class TestForward:
    def test_causality_suffix_perturbation(self, tiny_config, tiny_inputs):
        """Changing the token at position t leaves logits before t bitwise
        unchanged: masked attention weights are exactly zero."""
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        base = forward(params, tiny_config, feats, tokens)
        for t in range(1, tokens.shape[1]):
            bumped = tokens.copy()
            bumped[:, t] = (bumped[:, t] + 5) % 12
            out = forward(params, tiny_config, feats, bumped)
            np.testing.assert_array_equal(out[:, :t], base[:, :t])
            assert not np.array_equal(out[:, t:], base[:, t:])

    def test_feature_conditioning_is_live(self, tiny_config, tiny_inputs):
        _, tokens = tiny_inputs
        params = init_params(tiny_config)
        zero = forward(params, tiny_config, np.zeros((2, 6)), tokens)
        onehot = np.zeros((2, 6))
        onehot[:, 1] = 1.0
        hot = forward(params, tiny_config, onehot, tokens)
        assert not np.array_equal(zero, hot)

    def test_length_overflow_rejected(self, tiny_config):
        params = init_params(tiny_config)
        feats = np.zeros((1, 6))
        tokens = np.zeros((1, 9), dtype=int)
        with pytest.raises(ValueError, match="overflow"):
            forward(params, tiny_config, feats, tokens)

    def test_bad_token_id_rejected(self, tiny_config):
        params = init_params(tiny_config)
        with pytest.raises(ValueError, match="vocabulary"):
            forward(params, tiny_config, np.zeros((1, 6)), np.array([[99]]))

    def test_tape_and_plain_forward_agree_bitwise(self, tiny_config, tiny_inputs):
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        plain = forward(params, tiny_config, feats, tokens)
        taped, _ = forward_tape(params, tiny_config, feats, tokens)
        np.testing.assert_array_equal(plain, taped)

    def test_golden_logits(self, tiny_config, tiny_inputs):
        """Stored golden array, regenerated by the implementation on first
        run; flags any unintended numeric drift afterwards."""
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        logits = forward(params, tiny_config, feats, tokens)
        if not os.path.exists(GOLDEN_PATH):
            os.makedirs(os.path.dirname(GOLDEN_PATH), exist_ok=True)
            with open(GOLDEN_PATH, "w") as fh:
                json.dump(logits.tolist(), fh)
        with open(GOLDEN_PATH) as fh:
            golden = np.asarray(json.load(fh))
        np.testing.assert_allclose(logits, golden, rtol=1e-12, atol=1e-12)

    def test_float32_mode_runs(self):
        config = ModelConfig(
            vocab_size=12, feature_dim=6, d_model=8, n_layers=1, n_heads=2,
            max_len=8, seed=3, dtype="float32",
        )
        params = init_params(config)
        out = forward(params, config, np.zeros((1, 6), dtype=np.float32), np.array([[1, 2]]))
        assert out.dtype == np.float32


class TestBackward:
    def test_matches_finite_differences(self, tiny_config, tiny_inputs):
        """100 random parameter coordinates vs central differences."""
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        rng = np.random.default_rng(23)
        dlogits = rng.normal(size=(2, 5, 12))
        _, tape = forward_tape(params, tiny_config, feats, tokens)
        grads = backward(tape, dlogits)

        def objective():
            return float((forward(params, tiny_config, feats, tokens) * dlogits).sum())

        h = 1e-6
        names = list(params)
        worst = 0.0
        for _ in range(100):
            name = names[rng.integers(len(names))]
            arr = params[name]
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            orig = arr[idx]
            arr[idx] = orig + h
            up = objective()
            arr[idx] = orig - h
            dn = objective()
            arr[idx] = orig
            fd = (up - dn) / (2 * h)
            an = grads[name][idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
        assert worst <= 1e-4

    def test_zero_upstream_zero_grads(self, tiny_config, tiny_inputs):
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        _, tape = forward_tape(params, tiny_config, feats, tokens)
        grads = backward(tape, np.zeros((2, 5, 12)))
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_masked_positions_do_not_touch_params(self, tiny_config, tiny_inputs):
        """With upstream zeroed at a position, its logits cannot influence
        any parameter gradient (how PAD positions are excluded)."""
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        rng = np.random.default_rng(5)
        dlogits = rng.normal(size=(2, 5, 12))
        dlogits[:, -2:, :] = 0.0  # pretend trailing positions are PAD

        _, tape = forward_tape(params, tiny_config, feats, tokens)
        grads_a = backward(tape, dlogits)

        altered = tokens.copy()
        altered[:, -1] = (altered[:, -1] + 3) % 12  # change a "PAD" slot token
        _, tape_b = forward_tape(params, tiny_config, feats, altered)
        grads_b = backward(tape_b, dlogits)
        for k in grads_a:
            np.testing.assert_allclose(grads_a[k], grads_b[k], atol=1e-15)

    def test_shape_mismatch_rejected(self, tiny_config, tiny_inputs):
        feats, tokens = tiny_inputs
        params = init_params(tiny_config)
        _, tape = forward_tape(params, tiny_config, feats, tokens)
        with pytest.raises(ValueError, match="shape"):
            backward(tape, np.zeros((2, 5, 13)))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tiny_config, tmp_path):
        params = init_params(tiny_config)
        path = tmp_path / "ckpt.json"
        save_checkpoint(path, tiny_config, params)
        loaded_config, loaded = load_checkpoint(path)
        assert loaded_config == tiny_config
        for k in params:
            assert params[k].dtype == loaded[k].dtype
            np.testing.assert_array_equal(params[k], loaded[k])
