"""Tests for the from-scratch MLP: features, gradients, Adam, training, files."""

import numpy as np
import pytest

from mimoest.channel import ChannelConfig, generate_pilots
from mimoest.dataset import generate_dataset
from mimoest.errors import (
    ConfigurationError,
    CorruptionError,
    DataError,
    FormatError,
    ParameterError,
    ShapeError,
)
from mimoest.neural import (
    AdamState,
    MlpConfig,
    MlpModel,
    adam_state_for,
    adam_step,
    backward,
    channel_to_targets,
    count_flops,
    count_params,
    defeaturize,
    featurize,
    featurize_batch,
    forward,
    init_model,
    load_model,
    mse_loss,
    predict,
    predict_batch,
    save_model,
    train,
    train_arrays,
    TrainReport,
)
from mimoest.numerics import RngStream


def small_model(widths, seed=0, nr=1, nt=1):
    cfg = MlpConfig(layer_widths=widths, init_seed=seed)
    return init_model(cfg, nr, nt)


class TestFeaturize:
    def test_scalar_channel(self):
        vec = featurize(np.array([[3 + 4j]]), 30.0)
        np.testing.assert_array_equal(vec, [3.0, 4.0, 1.0])

    def test_zero_everything(self):
        vec = featurize(np.zeros((2, 2), dtype=complex), 0.0)
        assert np.all(vec == 0.0) and vec.shape == (9,)

    def test_four_by_four_length(self):
        vec = featurize(np.ones((4, 4), dtype=complex), 10.0)
        assert vec.shape == (33,)

    def test_column_major_order(self):
        h = np.array([[1 + 10j, 3 + 30j], [2 + 20j, 4 + 40j]])
        vec = featurize(h, 0.0)
        np.testing.assert_array_equal(vec[:4], [1, 2, 3, 4])
        np.testing.assert_array_equal(vec[4:8], [10, 20, 30, 40])

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        h = rng.standard_normal((5, 3, 2)) + 1j * rng.standard_normal((5, 3, 2))
        snr = rng.uniform(-10, 30, 5)
        batch = featurize_batch(h, snr)
        for i in range(5):
            np.testing.assert_array_equal(batch[i], featurize(h[i], snr[i]))


class TestDefeaturize:
    def test_scalar_inverse(self):
        assert defeaturize(np.array([3.0, 4.0]), 1, 1)[0, 0] == 3 + 4j

    def test_zero_vector(self):
        assert np.all(defeaturize(np.zeros(8), 2, 2) == 0)

    def test_round_trip_exact(self):
        rng = np.random.default_rng(1)
        h = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        vec = channel_to_targets(h[None])[0]
        assert np.array_equal(defeaturize(vec, 4, 4), h)

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            defeaturize(np.zeros(7), 2, 2)


class TestForward:
    def test_zero_weights_yield_bias(self):
        model = small_model((3, 4, 2))
        for w in model.weights:
            w[:] = 0.0
        model.biases[-1][:] = [0.5, -1.5]
        np.testing.assert_array_equal(forward(model, np.zeros(3)), [0.5, -1.5])
        np.testing.assert_array_equal(forward(model, np.ones(3)), [0.5, -1.5])

    def test_single_linear_layer(self):
        model = small_model((1, 1))
        model.weights[0][:] = [[-1.0]]
        model.biases[0][:] = 0.0
        assert forward(model, np.array([2.0]))[0] == -2.0

    def test_two_layer_relu_fixture(self):
        model = small_model((1, 2, 1))
        model.weights[0][:] = [[1.0, -1.0]]
        model.biases[0][:] = 0.0
        model.weights[1][:] = [[1.0], [1.0]]
        model.biases[1][:] = 0.0
        assert forward(model, np.array([3.0]))[0] == 3.0
        assert forward(model, np.array([-3.0]))[0] == 3.0

    def test_width_mismatch(self):
        model = small_model((3, 2))
        with pytest.raises(ShapeError):
            forward(model, np.zeros(4))


class TestMseLoss:
    def test_equal_is_zero(self):
        assert mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0

    def test_mean_of_squares(self):
        assert mse_loss(np.array([1.0, 1.0]), np.array([0.0, 0.0])) == 1.0

    def test_single_element(self):
        assert mse_loss(np.array([2.0]), np.array([-1.0])) == 9.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros(2), np.zeros(3))


class TestBackward:
    def test_zero_at_minimum(self):
        model = small_model((2, 3, 2), seed=3)
        x = np.array([0.3, -0.7])
        target = forward(model, x)
        grad_w, grad_b = backward(model, x, target)
        assert all(np.all(g == 0) for g in grad_w + grad_b)

    def test_scalar_hand_gradient(self):
        model = small_model((1, 1))
        model.weights[0][:] = [[1.0]]
        model.biases[0][:] = 0.0
        grad_w, grad_b = backward(model, np.array([2.0]), np.array([0.0]))
        assert grad_w[0][0, 0] == 8.0  # 2*x*(w*x - t) with x=2, w=1, t=0
        assert grad_b[0][0] == 4.0

    @pytest.mark.parametrize("seed", range(10))
    def test_gradients_match_finite_differences(self, seed):
        model = small_model((5, 7, 3), seed=seed)
        rng = np.random.default_rng(1000 + seed)
        x = rng.standard_normal(5)
        target = rng.standard_normal(3)
        grad_w, grad_b = backward(model, x, target)
        params = model.weights + model.biases
        grads = grad_w + grad_b
        step = 1e-5
        for p, g in zip(params, grads):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for idx in range(0, flat_p.size, max(1, flat_p.size // 5)):
                orig = flat_p[idx]
                flat_p[idx] = orig + step
                up = mse_loss(forward(model, x), target)
                flat_p[idx] = orig - step
                down = mse_loss(forward(model, x), target)
                flat_p[idx] = orig
                numeric = (up - down) / (2 * step)
                denom = max(abs(numeric), 1e-8)
                assert abs(flat_g[idx] - numeric) / denom < 1e-4


class TestAdam:
    def test_first_step_magnitude(self):
        model = small_model((2, 2))
        state = adam_state_for(model)
        g_w = [np.full_like(model.weights[0], 0.5)]
        g_b = [np.zeros_like(model.biases[0])]
        before = model.weights[0].copy()
        adam_step(model, (g_w, g_b), state, lr=1e-3, weight_decay=0.0)
        step = before - model.weights[0]
        np.testing.assert_allclose(step, 1e-3 * 0.5 / (0.5 + 1e-8), rtol=1e-9)

    def test_zero_gradient_no_motion(self):
        model = small_model((3, 2), seed=1)
        state = adam_state_for(model)
        zeros = ([np.zeros_like(model.weights[0])], [np.zeros_like(model.biases[0])])
        before = [w.copy() for w in model.weights]
        adam_step(model, zeros, state, lr=1e-4, weight_decay=0.0)
        assert all(np.array_equal(a, b) for a, b in zip(before, model.weights))

    def test_decay_only_step(self):
        model = small_model((3, 2), seed=2)
        state = adam_state_for(model)
        zeros = ([np.zeros_like(model.weights[0])], [np.zeros_like(model.biases[0])])
        before = model.weights[0].copy()
        adam_step(model, zeros, state, lr=1e-4, weight_decay=1e-5)
        np.testing.assert_allclose(model.weights[0], before * (1 - 1e-9), rtol=1e-15)

    def test_lr_zero_is_identity(self):
        model = small_model((4, 3), seed=3)
        state = adam_state_for(model)
        grads = backward(model, np.ones(4), np.zeros(3))
        before = [p.copy() for p in model.weights + model.biases]
        adam_step(model, grads, state, lr=0.0, weight_decay=1e-5)
        after = model.weights + model.biases
        assert all(np.array_equal(a, b) for a, b in zip(before, after))

    def test_step_counter_increments(self):
        model = small_model((2, 2))
        state = adam_state_for(model)
        zeros = ([np.zeros_like(model.weights[0])], [np.zeros_like(model.biases[0])])
        adam_step(model, zeros, state, 1e-4, 0.0)
        adam_step(model, zeros, state, 1e-4, 0.0)
        assert state.t == 2


def linear_fixture(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 6))
    a = rng.standard_normal((6, 4))
    return x, x @ a


class TestTrain:
    def test_linear_map_learnable(self):
        x, y = linear_fixture()
        cfg = MlpConfig(layer_widths=(6, 32, 16, 4), lr=1e-2, max_epochs=50, patience=50)
        model, report = train_arrays(x, y, cfg, RngStream(1, 0), nr=1, nt=2)
        assert report.val_loss[report.best_epoch] < 1e-3

    def test_progress_over_first_epoch(self):
        x, y = linear_fixture(seed=1)
        cfg = MlpConfig(layer_widths=(6, 16, 4), lr=1e-3, max_epochs=10)
        model, report = train_arrays(x, y, cfg, RngStream(2, 0), nr=1, nt=2)
        assert report.train_loss[report.best_epoch] < report.train_loss[0]

    def test_determinism_bitwise(self):
        x, y = linear_fixture(seed=2)
        cfg = MlpConfig(layer_widths=(6, 16, 4), lr=1e-3, max_epochs=5)
        m1, r1 = train_arrays(x, y, cfg, RngStream(3, 0), nr=1, nt=2)
        m2, r2 = train_arrays(x, y, cfg, RngStream(3, 0), nr=1, nt=2)
        assert r1.train_loss == r2.train_loss
        assert r1.val_loss == r2.val_loss
        assert r1.best_epoch == r2.best_epoch
        assert all(np.array_equal(a, b) for a, b in zip(m1.weights, m2.weights))

    def test_early_stop_restores_best_epoch(self):
        # Tiny noisy set: validation loss soon stops improving, training halts
        # early, and the returned parameters must equal a rerun truncated at
        # the best epoch.
        rng = np.random.default_rng(3)
        x = rng.standard_normal((40, 3))
        y = rng.standard_normal((40, 2))
        cfg = MlpConfig(layer_widths=(3, 8, 2), lr=3e-3, max_epochs=60, patience=3)
        model, report = train_arrays(x, y, cfg, RngStream(4, 0), nr=1, nt=1)
        assert report.stopped_early
        assert report.best_epoch < len(report.val_loss) - 1
        cfg_short = MlpConfig(
            layer_widths=(3, 8, 2), lr=3e-3, max_epochs=report.best_epoch + 1, patience=3
        )
        model2, report2 = train_arrays(x, y, cfg_short, RngStream(4, 0), nr=1, nt=1)
        assert all(np.array_equal(a, b) for a, b in zip(model.weights, model2.weights))
        assert all(np.array_equal(a, b) for a, b in zip(model.biases, model2.biases))

    def test_too_small_dataset(self):
        x, y = linear_fixture(n=5)
        cfg = MlpConfig(layer_widths=(6, 4, 4))
        with pytest.raises(DataError):
            train_arrays(x, y, cfg, RngStream(5, 0), nr=1, nt=2)

    def test_train_on_channel_samples(self):
        cfg = ChannelConfig(nt=2, nr=2, pilot_len=2)
        ds = generate_dataset(cfg, 60, 0.0, 20.0, seed=9)
        mlp_cfg = MlpConfig.for_channel(2, 2, hidden=(16, 8), max_epochs=3)
        model, report = train(ds.samples, ds.xp, mlp_cfg, RngStream(6, 0))
        assert model.nr == 2 and model.nt == 2
        assert len(report.train_loss) == 3


class TestStandardization:
    def test_round_trip_identity(self):
        rng = np.random.default_rng(4)
        x, y = linear_fixture(seed=5)
        cfg = MlpConfig(layer_widths=(6, 8, 4), max_epochs=2)
        model, _ = train_arrays(x, y, cfg, RngStream(7, 0), nr=1, nt=2)
        v = rng.standard_normal(6)
        std = (v - model.feature_mean) / model.feature_std
        back = std * model.feature_std + model.feature_mean
        np.testing.assert_allclose(back, v, atol=1e-12)


def build_passthrough_model(nt=2, nr=2):
    """Weights contrived to output the first 2*nt*nr raw features unchanged.

    Hidden ReLU layers carry [relu(x), relu(-x)] pairs; the output layer
    recombines them, so the model returns its h_ls input exactly.
    """
    m = 2 * nt * nr
    d_in = m + 1
    cfg = MlpConfig.for_channel(nt, nr)
    model = init_model(cfg, nr, nt)
    for w in model.weights:
        w[:] = 0.0
    for b in model.biases:
        b[:] = 0.0
    w1 = model.weights[0]
    for i in range(d_in):
        w1[i, i] = 1.0
        w1[i, d_in + i] = -1.0
    for layer in (1, 2):
        w = model.weights[layer]
        for i in range(2 * d_in):
            w[i, i] = 1.0
    w_out = model.weights[3]
    for j in range(m):
        w_out[j, j] = 1.0
        w_out[d_in + j, j] = -1.0
    model.feature_mean = np.zeros(d_in)
    model.feature_std = np.ones(d_in)
    model.target_mean = np.zeros(m)
    model.target_std = np.ones(m)
    return model


class TestPredict:
    def test_identity_fixture_returns_input(self):
        model = build_passthrough_model()
        rng = np.random.default_rng(5)
        h_ls = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        out = predict(model, h_ls, snr_db=12.0)
        assert np.max(np.abs(out - h_ls)) < 1e-6

    def test_output_shape(self):
        model = build_passthrough_model()
        out = predict(model, np.zeros((2, 2), dtype=complex), 0.0)
        assert out.shape == (2, 2)

    def test_deterministic(self):
        model = build_passthrough_model()
        h_ls = np.ones((2, 2), dtype=complex)
        assert np.array_equal(predict(model, h_ls, 5.0), predict(model, h_ls, 5.0))

    def test_untrained_model_rejected(self):
        cfg = MlpConfig.for_channel(2, 2)
        model = init_model(cfg, 2, 2)
        with pytest.raises(ConfigurationError):
            predict(model, np.zeros((2, 2), dtype=complex), 0.0)

    def test_wrong_shape_rejected(self):
        model = build_passthrough_model()
        with pytest.raises(ShapeError):
            predict(model, np.zeros((4, 4), dtype=complex), 0.0)


class TestAccounting:
    def test_reference_architecture(self):
        cfg = MlpConfig(layer_widths=(64, 256, 128, 64, 64))
        assert count_params(cfg) == 61_952

    def test_minimal_network(self):
        assert count_params(MlpConfig(layer_widths=(1, 1))) == 2

    @pytest.mark.parametrize("seed", range(20))
    def test_matches_brute_force_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        widths = tuple(int(w) for w in rng.integers(1, 40, rng.integers(2, 6)))
        cfg = MlpConfig(layer_widths=widths)
        model = init_model(cfg, 1, 1)
        enumerated = sum(w.size for w in model.weights) + sum(b.size for b in model.biases)
        assert count_params(cfg) == enumerated

    def test_flops_formula(self):
        # Per layer: 2*w_in*w_out matmul ops plus w_out bias/activation ops.
        cfg = MlpConfig(layer_widths=(64, 256, 128, 64, 64))
        assert count_flops(cfg) == 2 * 61_440 + 512

    def test_flops_quadratic_scaling(self):
        w1 = (8, 16, 4)
        w2 = tuple(2 * w for w in w1)
        cfg1, cfg2 = MlpConfig(layer_widths=w1), MlpConfig(layer_widths=w2)
        matmul1 = count_flops(cfg1) - sum(w1[1:])
        matmul2 = count_flops(cfg2) - sum(w2[1:])
        assert matmul2 == 4 * matmul1


class TestModelFile:
    def _trained(self, tmp_path):
        x, y = linear_fixture(n=50, seed=7)
        cfg = MlpConfig(layer_widths=(6, 8, 4), max_epochs=3)
        return train_arrays(x, y, cfg, RngStream(8, 0), nr=1, nt=2)

    def test_round_trip_bitwise(self, tmp_path):
        model, report = self._trained(tmp_path)
        path = tmp_path / "model.mlpm"
        save_model(model, report, path)
        loaded, loaded_report = load_model(path)
        assert all(np.array_equal(a, b) for a, b in zip(model.weights, loaded.weights))
        assert all(np.array_equal(a, b) for a, b in zip(model.biases, loaded.biases))
        assert np.array_equal(model.feature_mean, loaded.feature_mean)
        assert np.array_equal(model.target_std, loaded.target_std)
        assert loaded_report.best_epoch == report.best_epoch
        assert loaded_report.val_loss == report.val_loss
        path2 = tmp_path / "model2.mlpm"
        save_model(loaded, loaded_report, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mlpm"
        path.write_bytes(b"XXXX" + b"\x00" * 64)
        with pytest.raises(FormatError):
            load_model(path)

    def test_truncation(self, tmp_path):
        model, report = self._trained(tmp_path)
        path = tmp_path / "model.mlpm"
        save_model(model, report, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptionError):
            load_model(path)

    def test_untrained_refused(self, tmp_path):
        model = init_model(MlpConfig(layer_widths=(3, 2)), 1, 1)
        with pytest.raises(ConfigurationError):
            save_model(model, TrainReport(), tmp_path / "x.mlpm")


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"layer_widths": (5,)},
            {"layer_widths": (5, 0, 3)},
            {"layer_widths": (5, 3), "lr": -1.0},
            {"layer_widths": (5, 3), "patience": 0},
            {"layer_widths": (5, 3), "val_fraction": 0.0},
            {"layer_widths": (5, 3), "batch_size": 0},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            MlpConfig(**kwargs)

    def test_for_channel_widths(self):
        cfg = MlpConfig.for_channel(4, 4)
        assert cfg.layer_widths == (33, 256, 128, 64, 32)
