"""MLP forward/backward against central differences, Adam determinism, file I/O."""

import numpy as np
import pytest

from morphfit import (
    MlpParams,
    SizingError,
    TrainConfig,
    TrainingDivergenceError,
    mlp_forward,
    mlp_gradient,
    mlp_init,
    predict_deformation,
    train_shape_branch,
)


def numeric_gradient(params: MlpParams, x, t, eps=1e-5):
    """Central-difference loss gradients for every weight and bias entry."""
    def loss_at():
        y = mlp_forward(params, x)
        return float(np.mean((y - t) ** 2))

    grads_w, grads_b = [], []
    for w in params.weights:
        g = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + eps
            hi = loss_at()
            w[idx] = orig - eps
            lo = loss_at()
            w[idx] = orig
            g[idx] = (hi - lo) / (2 * eps)
            it.iternext()
        grads_w.append(g)
    for b in params.biases:
        g = np.zeros_like(b)
        for idx in range(b.shape[0]):
            orig = b[idx]
            b[idx] = orig + eps
            hi = loss_at()
            b[idx] = orig - eps
            lo = loss_at()
            b[idx] = orig
            g[idx] = (hi - lo) / (2 * eps)
        grads_b.append(g)
    return grads_w, grads_b


class TestInit:
    def test_bounds_and_zero_biases(self):
        params = mlp_init([142, 32, 32, 30], seed=0)
        assert [w.shape for w in params.weights] == [(32, 142), (32, 32), (30, 32)]
        for w in params.weights:
            bound = 1.0 / np.sqrt(w.shape[1])
            assert np.abs(w).max() < bound
        for b in params.biases:
            np.testing.assert_array_equal(b, 0.0)
        assert params.activations == ["relu", "relu", "linear"]

    def test_uniform_spread_matches_fan_in_scaling(self):
        params = mlp_init([200, 300, 10], seed=3)
        w = params.weights[0]
        bound = 1.0 / np.sqrt(200)
        # Uniform(-bound, bound) has std bound/sqrt(3); 200*300 draws pin it well.
        assert np.std(w) == pytest.approx(bound / np.sqrt(3), rel=0.05)

    def test_deterministic_in_seed(self):
        a = mlp_init([10, 8, 4], seed=9)
        b = mlp_init([10, 8, 4], seed=9)
        c = mlp_init([10, 8, 4], seed=10)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)
        assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))

    def test_bad_dims_raise(self):
        with pytest.raises(SizingError):
            mlp_init([5], seed=0)
        with pytest.raises(SizingError):
            mlp_init([5, 0, 3], seed=0)


class TestForward:
    def test_single_and_batch_agree(self):
        params = mlp_init([6, 5, 4], seed=1)
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 6))
        batch = mlp_forward(params, x)
        for i in range(3):
            # BLAS may route (1, d) and (3, d) products differently; last-ulp slack.
            np.testing.assert_allclose(mlp_forward(params, x[i]), batch[i],
                                       rtol=1e-12, atol=0)

    def test_linear_network_is_exact_matrix_product(self):
        params = MlpParams(
            weights=[np.array([[1.0, 2.0], [3.0, -1.0]])],
            biases=[np.array([0.5, -0.5])],
            activations=["linear"],
        )
        got = mlp_forward(params, np.array([2.0, 1.0]))
        np.testing.assert_array_equal(got, [1 * 2 + 2 * 1 + 0.5, 3 * 2 - 1 * 1 - 0.5])

    def test_relu_clamps_negative_preactivations(self):
        params = MlpParams(
            weights=[np.array([[1.0]]), np.array([[1.0]])],
            biases=[np.array([-5.0]), np.array([0.0])],
            activations=["relu", "linear"],
        )
        assert mlp_forward(params, np.array([3.0]))[0] == 0.0
        assert mlp_forward(params, np.array([7.0]))[0] == 2.0

    def test_wrong_input_dim_raises(self):
        params = mlp_init([6, 4], seed=0)
        with pytest.raises(SizingError):
            mlp_forward(params, np.zeros(5))


class TestGradient:
    def test_matches_central_differences_on_paper_scale_net(self):
        params = mlp_init([142, 32, 32, 30], seed=5)
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 142))
        t = rng.standard_normal((4, 30))
        gw, gb, _ = mlp_gradient(params, x, t)
        nw, nb = numeric_gradient(params, x, t)
        worst = 0.0
        for g, n in list(zip(gw, nw)) + list(zip(gb, nb)):
            scale = np.maximum(np.abs(n), 1e-8)
            worst = max(worst, float((np.abs(g - n) / scale).max()))
        assert worst < 1e-4

    def test_zero_loss_gives_zero_gradients(self):
        params = mlp_init([5, 4, 3], seed=7)
        rng = np.random.default_rng(8)
        x = rng.standard_normal((6, 5))
        t = mlp_forward(params, x)
        gw, gb, loss = mlp_gradient(params, x, t)
        assert loss == 0.0
        for g in gw + gb:
            np.testing.assert_array_equal(g, 0.0)

    def test_loss_is_mean_over_batch_and_output(self):
        params = mlp_init([3, 2], seed=9)
        rng = np.random.default_rng(10)
        x = rng.standard_normal((5, 3))
        t = rng.standard_normal((5, 2))
        _, _, loss = mlp_gradient(params, x, t)
        y = mlp_forward(params, x)
        assert loss == pytest.approx(float(np.mean((y - t) ** 2)), rel=1e-15)

    def test_batch_size_mismatch_raises(self):
        params = mlp_init([3, 2], seed=0)
        with pytest.raises(SizingError):
            mlp_gradient(params, np.zeros((4, 3)), np.zeros((5, 2)))


class TestValidationAndFile:
    def test_chain_mismatch_raises(self):
        with pytest.raises(SizingError):
            MlpParams(
                weights=[np.zeros((4, 3)), np.zeros((2, 5))],
                biases=[np.zeros(4), np.zeros(2)],
                activations=["relu", "linear"],
            ).validate()

    def test_unknown_activation_raises(self):
        with pytest.raises(SizingError):
            MlpParams(
                weights=[np.zeros((2, 2))],
                biases=[np.zeros(2)],
                activations=["tanh"],
            ).validate()

    def test_save_load_roundtrip_bitwise(self, tmp_path):
        params = mlp_init([12, 9, 6], seed=11)
        params.save(tmp_path / "net")
        loaded = MlpParams.load(tmp_path / "net")
        assert loaded.activations == params.activations
        for a, b in zip(loaded.weights, params.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(loaded.biases, params.biases):
            np.testing.assert_array_equal(a, b)


class TestTraining:
    def _toy_problem(self, n=64, din=6, dout=4, seed=12):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((n, din))
        truth = rng.standard_normal((dout, din))
        t = x @ truth.T
        return x, t

    def test_training_is_bitwise_deterministic(self):
        x, t = self._toy_problem()
        cfg = TrainConfig(epochs=5, hidden=(16,), learning_rate=1e-3, seed=3)
        p1, h1 = train_shape_branch(x, t, cfg)
        p2, h2 = train_shape_branch(x, t, cfg)
        assert h1 == h2
        for a, b in zip(p1.weights, p2.weights):
            np.testing.assert_array_equal(a, b)
        for a, b in zip(p1.biases, p2.biases):
            np.testing.assert_array_equal(a, b)

    def test_loss_decreases_on_learnable_problem(self):
        x, t = self._toy_problem()
        cfg = TrainConfig(epochs=60, hidden=(32,), learning_rate=3e-3, seed=4)
        _, history = train_shape_branch(x, t, cfg)
        assert history[-1] < 0.25 * history[0]

    def test_non_finite_loss_raises_with_diagnostics(self):
        # Adam's normalized steps never overflow on their own; the guard fires
        # when the data pipeline hands over non-finite values.
        x, t = self._toy_problem()
        t[7, 1] = np.inf
        cfg = TrainConfig(epochs=3, hidden=(16,), batch_size=64, seed=5)
        with pytest.raises(TrainingDivergenceError) as err:
            train_shape_branch(x, t, cfg)
        assert err.value.epoch == 0
        assert err.value.batch == 0
        assert not np.isfinite(err.value.loss)

    def test_warm_start_params_are_used(self):
        x, t = self._toy_problem()
        params = mlp_init([6, 16, 4], seed=6)
        before = [w.copy() for w in params.weights]
        cfg = TrainConfig(epochs=1, learning_rate=1e-3, seed=6)
        trained, _ = train_shape_branch(x, t, cfg, params=params)
        assert trained is params
        assert any(not np.array_equal(a, b) for a, b in zip(before, trained.weights))

    def test_shape_mismatch_raises(self):
        with pytest.raises(SizingError):
            train_shape_branch(np.zeros((4, 3)), np.zeros((5, 2)), TrainConfig(epochs=1))

    def test_weight_decay_shrinks_weights(self):
        x, t = self._toy_problem()
        base_cfg = TrainConfig(epochs=20, hidden=(16,), learning_rate=1e-3, seed=7)
        decay_cfg = TrainConfig(epochs=20, hidden=(16,), learning_rate=1e-3, seed=7,
                                weight_decay=10.0)
        p_base, _ = train_shape_branch(x, t, base_cfg)
        p_decay, _ = train_shape_branch(x, t, decay_cfg)
        norm_base = sum(float(np.linalg.norm(w)) for w in p_base.weights)
        norm_decay = sum(float(np.linalg.norm(w)) for w in p_decay.weights)
        assert norm_decay < norm_base


class TestPredictDeformation:
    def test_decodes_network_output_through_basis(self, small_model, small_basis):
        n_in = small_model.n_identity + 2 * small_model.n_expression
        params = mlp_init([n_in, 24, 3 * small_basis.k], seed=13)
        identity = small_model.reference_identity()
        e_src = small_model.neutral_expression
        e_tgt = np.zeros(small_model.n_expression)
        field = predict_deformation(params, identity, e_src, e_tgt, small_basis)
        assert field.vectors.shape == (small_model.n_vertices, 3)
        features = np.concatenate([identity, e_src, e_tgt])
        coeffs = mlp_forward(params, features)
        from morphfit import decode
        want = decode(small_basis, coeffs)
        np.testing.assert_array_equal(field.vectors, want.vectors)

    def test_feature_dim_mismatch_raises(self, small_basis):
        params = mlp_init([10, 8, 3 * small_basis.k], seed=14)
        with pytest.raises(SizingError):
            predict_deformation(params, np.zeros(3), np.zeros(3), np.zeros(3),
                                small_basis)

    def test_output_dim_mismatch_raises(self, small_model, small_basis):
        n_in = small_model.n_identity + 2 * small_model.n_expression
        params = mlp_init([n_in, 8, 3 * small_basis.k + 1], seed=15)
        with pytest.raises(SizingError):
            predict_deformation(params, small_model.reference_identity(),
                                small_model.neutral_expression,
                                small_model.neutral_expression, small_basis)
