import numpy as np
import pytest

from cisir.loss import LossConfig, combined_loss, loss_gradient
from cisir.network import (
    ArchitectureConfig,
    OptimizerConfig,
    adam_step,
    backward,
    blocks_of,
    forward,
    init_model,
    leaky_relu,
    load_checkpoint,
    parameter_count,
    save_checkpoint,
)


def plain_arch(widths, **kwargs):
    kwargs.setdefault("embed_dim", widths[-1])
    kwargs.setdefault("use_batchnorm", False)
    return ArchitectureConfig(hidden_widths=tuple(widths), **kwargs)


class TestBlocks:
    def test_embed_dim_splits(self):
        arch = ArchitectureConfig(hidden_widths=(512, 32, 256, 32), embed_dim=32)
        assert blocks_of(arch) == [[512, 32], [256, 32]]

    def test_trailing_widths_form_final_block(self):
        arch = ArchitectureConfig(hidden_widths=(64, 16, 48), embed_dim=16)
        assert blocks_of(arch) == [[64, 16], [48]]


class TestInit:
    def test_deterministic_per_seed(self):
        arch = plain_arch([8, 4], use_batchnorm=True)
        a = init_model(arch, 3, seed=42)
        b = init_model(arch, 3, seed=42)
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])
        c = init_model(arch, 3, seed=43)
        assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)

    def test_parameter_count_shape_arithmetic(self):
        arch = plain_arch([8, 4])
        state = init_model(arch, 3, seed=0)
        expected = (3 * 8 + 8) + (8 * 4 + 4) + (4 * 1 + 1)
        assert parameter_count(state) == expected

    def test_parameter_count_with_batchnorm(self):
        arch = plain_arch([8, 4], use_batchnorm=True)
        state = init_model(arch, 3, seed=0)
        linear = (3 * 8 + 8) + (8 * 4 + 4) + (4 * 1 + 1)
        assert parameter_count(state) == linear + 2 * 8 + 2 * 4

    def test_plain_mlp_when_features_off(self):
        arch = plain_arch([8], dropout_rate=0.0)
        state = init_model(arch, 2, seed=0)
        assert set(state.params) == {"L0.W", "L0.b", "head.W", "head.b"}
        assert not state.bn_mean


class TestForward:
    def test_eval_mode_deterministic(self):
        arch = ArchitectureConfig(hidden_widths=(8, 4), embed_dim=4, dropout_rate=0.3)
        state = init_model(arch, 3, seed=1)
        X = np.random.default_rng(0).normal(size=(5, 3))
        a, _ = forward(state, X, train_mode=False)
        b, _ = forward(state, X, train_mode=False)
        np.testing.assert_array_equal(a, b)

    def test_hand_forward_oracle(self):
        # single hidden layer, identity-like weights, no norm/dropout: the
        # output is the LeakyReLU composition computed by hand
        arch = plain_arch([2], leaky_slope=0.1)
        state = init_model(arch, 2, seed=0)
        state.params["L0.W"] = np.eye(2)
        state.params["L0.b"] = np.zeros(2)
        state.params["head.W"] = np.array([[1.0], [1.0]])
        state.params["head.b"] = np.array([0.5])
        x = np.array([[3.0, -2.0]])
        expected = leaky_relu(np.array([3.0, -2.0]), 0.1).sum() + 0.5
        yhat, _ = forward(state, x, train_mode=False)
        assert yhat[0] == pytest.approx(expected, rel=1e-12)

    def test_duplicated_rows_duplicated_predictions(self):
        arch = ArchitectureConfig(hidden_widths=(8, 4), embed_dim=4)
        state = init_model(arch, 3, seed=2)
        row = np.random.default_rng(1).normal(size=(1, 3))
        X = np.repeat(row, 4, axis=0)
        yhat, _ = forward(state, X, train_mode=False)
        np.testing.assert_allclose(yhat, yhat[0], rtol=1e-12)

    def test_dropout_seed_replay(self):
        arch = plain_arch([16], dropout_rate=0.5)
        state = init_model(arch, 3, seed=3)
        X = np.random.default_rng(2).normal(size=(6, 3))
        a, _ = forward(state, X, train_mode=True, dropout_seed=9)
        b, _ = forward(state, X, train_mode=True, dropout_seed=9)
        c, _ = forward(state, X, train_mode=True, dropout_seed=10)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_dimension_mismatch(self):
        state = init_model(plain_arch([4]), 3, seed=0)
        with pytest.raises(ValueError, match="input columns"):
            forward(state, np.zeros((2, 5)), train_mode=False)

    def test_residual_block_identity_when_zeroed(self):
        # zeroing a block's weights leaves only its skip path, so the head
        # input of the two-block net equals the one-block net's head input
        # (same seed draws identical first-block weights in both)
        two_block = ArchitectureConfig(hidden_widths=(8, 4, 6, 4), embed_dim=4)
        one_block = ArchitectureConfig(hidden_widths=(8, 4), embed_dim=4)
        zeroed = init_model(two_block, 3, seed=4)
        reference = init_model(one_block, 3, seed=4)
        for name in ("L2", "L3"):
            for suffix in ("W", "b", "beta"):
                key = f"{name}.{suffix}"
                zeroed.params[key] = np.zeros_like(zeroed.params[key])
        X = np.random.default_rng(3).normal(size=(5, 3))
        _, cache_zeroed = forward(zeroed, X, train_mode=False)
        _, cache_reference = forward(reference, X, train_mode=False)
        np.testing.assert_allclose(
            cache_zeroed["head_in"], cache_reference["head_in"], atol=1e-12
        )


class TestBackward:
    def test_zero_upstream_gradient(self):
        arch = ArchitectureConfig(hidden_widths=(6, 4), embed_dim=4, dropout_rate=0.2)
        state = init_model(arch, 3, seed=5)
        X = np.random.default_rng(4).normal(size=(8, 3))
        _, cache = forward(state, X, train_mode=True, dropout_seed=1)
        grads = backward(state, cache, np.zeros(8))
        assert all(np.all(g == 0) for g in grads.values())

    def test_stale_cache_rejected(self):
        state = init_model(plain_arch([4]), 3, seed=0)
        X = np.zeros((2, 3))
        _, cache = forward(state, X, train_mode=False)
        with pytest.raises(ValueError, match="stale cache"):
            backward(state, cache, np.zeros(2))
        _, cache = forward(state, X, train_mode=True)
        with pytest.raises(ValueError, match="stale cache"):
            backward(state, cache, np.zeros(5))

    def test_single_linear_layer_least_squares_gradient(self):
        # slope 1 turns LeakyReLU into identity, so the head weight gradient
        # is the closed-form least-squares gradient 2 A^T (A w - y) / n
        arch = plain_arch([3], leaky_slope=1.0)
        state = init_model(arch, 4, seed=6)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(10, 4))
        y = rng.normal(size=10)
        yhat, cache = forward(state, X, train_mode=True)
        A = X @ state.params["L0.W"] + state.params["L0.b"]
        dL = 2.0 / 10 * (yhat - y)
        grads = backward(state, cache, dL)
        expected_head = A.T @ ((2.0 / 10) * (yhat - y))[:, None]
        np.testing.assert_allclose(grads["head.W"], expected_head, rtol=1e-10)

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    @pytest.mark.parametrize("use_batchnorm", [False, True])
    def test_finite_difference_through_loss(self, lam, use_batchnorm):
        rng = np.random.default_rng(6)
        n = 8
        arch = ArchitectureConfig(
            hidden_widths=(5, 5), embed_dim=5, dropout_rate=0.0,
            use_batchnorm=use_batchnorm,
        )
        state = init_model(arch, 3, seed=7)
        X = rng.normal(size=(n, 3))
        y = rng.normal(size=n)
        re = np.full(n, 1.0 / n)
        config = LossConfig(lam=lam, re=re, rc=re)

        def loss_value():
            yhat, _ = forward(state, X, train_mode=True)
            return combined_loss(y, yhat, config).total

        yhat, cache = forward(state, X, train_mode=True)
        grads = backward(state, cache, loss_gradient(y, yhat, config))

        step = 1e-6
        for key in state.params:
            flat = state.params[key].reshape(-1)
            g_flat = grads[key].reshape(-1)
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + step
                up = loss_value()
                flat[idx] = orig - step
                down = loss_value()
                flat[idx] = orig
                numeric = (up - down) / (2 * step)
                scale = max(abs(numeric), abs(g_flat[idx]), 1e-4)
                assert abs(g_flat[idx] - numeric) / scale <= 1e-3, key


class TestAdamStep:
    def test_zero_gradients_no_decay_is_identity(self):
        state = init_model(plain_arch([4]), 3, seed=8)
        before = {k: v.copy() for k, v in state.params.items()}
        grads = {k: np.zeros_like(v) for k, v in state.params.items()}
        adam_step(state, grads, OptimizerConfig(learning_rate=0.1))
        for key in before:
            np.testing.assert_array_equal(state.params[key], before[key])
        assert state.step == 1

    def test_first_step_is_sign_scaled(self):
        state = init_model(plain_arch([4]), 3, seed=9)
        before = {k: v.copy() for k, v in state.params.items()}
        rng = np.random.default_rng(7)
        grads = {k: rng.normal(size=v.shape) for k, v in state.params.items()}
        eta = 0.01
        adam_step(state, grads, OptimizerConfig(learning_rate=eta))
        for key in before:
            delta = state.params[key] - before[key]
            assert np.all(np.abs(delta) <= eta * (1 + 1e-6))
            nonzero = np.abs(grads[key]) > 1e-12
            np.testing.assert_allclose(
                delta[nonzero], -eta * np.sign(grads[key])[nonzero], rtol=1e-5
            )

    def test_decoupled_decay_shrinks_parameters(self):
        state = init_model(plain_arch([4]), 3, seed=10)
        before = {k: v.copy() for k, v in state.params.items()}
        grads = {k: np.zeros_like(v) for k, v in state.params.items()}
        eta = 0.05
        adam_step(state, grads, OptimizerConfig(learning_rate=eta, weight_decay=0.1))
        for key in before:
            np.testing.assert_allclose(
                state.params[key], before[key] * (1 - eta * 0.1), rtol=1e-12
            )


class TestCheckpoint:
    def test_round_trip_predictions(self, tmp_path):
        arch = ArchitectureConfig(hidden_widths=(8, 4), embed_dim=4, dropout_rate=0.1)
        state = init_model(arch, 3, seed=11)
        X = np.random.default_rng(8).normal(size=(6, 3))
        forward(state, X, train_mode=True, dropout_seed=1)  # move BN stats off init
        path = tmp_path / "model.npz"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        assert loaded.arch == state.arch
        assert loaded.step == state.step
        a, _ = forward(state, X, train_mode=False)
        b, _ = forward(loaded, X, train_mode=False)
        np.testing.assert_array_equal(a, b)
