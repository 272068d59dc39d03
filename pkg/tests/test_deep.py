import math

import numpy as np
import pytest

from tsforge.deep import (
    Activation,
    CellParams,
    Initializer,
    RnnModel,
    bptt_gradients,
    forward,
    forward_batch,
    from_json,
    gru_step,
    lstm_step,
    predict_series,
    simple_step,
    to_json,
    train,
)
from tsforge.errors import ModelError


def make_model(cell="lstm", hidden=3, window=4, seed=0, **kw):
    return RnnModel(cell=cell, window=window, hidden_size=hidden,
                    initializer=Initializer(seed=seed), **kw)


def zero_params(cell, hidden=2, inputs=1):
    params = CellParams.create(cell, hidden, inputs, Initializer(seed=0), np.random.default_rng(0))
    for gate in params.weights:
        params.weights[gate][:] = 0.0
        params.biases[gate][:] = 0.0
    return params


def finite_difference_check(model, X, y, step=1e-5, tol=1e-4):
    _, grads, _ = bptt_gradients(model, X, y)
    worst = 0.0
    for name, array in model.parameters():
        flat = array.ravel()
        grad_flat = grads[name].ravel()
        for idx in range(flat.size):
            keep = flat[idx]
            flat[idx] = keep + step
            preds, _, _ = forward_batch(model, X)
            up = float(np.mean((preds - y) ** 2))
            flat[idx] = keep - step
            preds, _, _ = forward_batch(model, X)
            down = float(np.mean((preds - y) ** 2))
            flat[idx] = keep
            fd = (up - down) / (2 * step)
            err = abs(grad_flat[idx] - fd) / max(abs(grad_flat[idx]), abs(fd), 1.0)
            worst = max(worst, err)
            assert err < tol, f"{name}[{idx}]: analytic {grad_flat[idx]} vs fd {fd}"
    return worst


class TestSteps:
    def test_lstm_zero_params(self):
        params = zero_params("lstm")
        c_prev = np.array([0.8, -0.4])
        h, c = lstm_step(np.array([1.0]), np.zeros(2), c_prev, params)
        np.testing.assert_allclose(c, 0.5 * c_prev, atol=1e-15)
        np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c_prev), atol=1e-15)

    def test_lstm_saturated_forget_keeps_state(self):
        params = zero_params("lstm")
        params.biases["f"][:] = 20.0
        params.biases["i"][:] = -20.0
        c = np.array([1.3, -0.7])
        h = np.zeros(2)
        for _ in range(50):
            h, c = lstm_step(np.array([0.3]), h, c, params)
        np.testing.assert_allclose(c, [1.3, -0.7], atol=1e-6)

    def test_lstm_closed_forget_zeroes_state(self):
        params = zero_params("lstm")
        params.biases["f"][:] = -20.0
        params.biases["i"][:] = -20.0
        c = np.array([5.0, -3.0])
        h = np.zeros(2)
        for _ in range(50):
            h, c = lstm_step(np.array([0.0]), h, c, params)
        np.testing.assert_allclose(c, 0.0, atol=1e-6)

    def test_lstm_hand_computed_all_ones(self):
        params = zero_params("lstm", hidden=2, inputs=1)
        for gate in params.weights:
            params.weights[gate][:] = 1.0
        x, h_prev, c_prev = np.array([0.5]), np.array([0.1, -0.2]), np.array([0.3, 0.4])
        pre = 0.1 - 0.2 + 0.5  # every gate sees the same sum
        sig, th = 1 / (1 + math.exp(-pre)), math.tanh(pre)
        c_expect = sig * np.array([0.3, 0.4]) + sig * th
        h_expect = sig * np.tanh(c_expect)
        h, c = lstm_step(x, h_prev, c_prev, params)
        np.testing.assert_allclose(c, c_expect, atol=1e-12)
        np.testing.assert_allclose(h, h_expect, atol=1e-12)

    def test_gru_zero_params_halves_state(self):
        params = zero_params("gru")
        h_prev = np.array([0.6, -1.0])
        h = gru_step(np.array([2.0]), h_prev, params)
        np.testing.assert_allclose(h, 0.5 * h_prev, atol=1e-15)

    def test_gru_shut_update_gate_keeps_state(self):
        params = zero_params("gru")
        params.biases["z"][:] = -20.0
        h_prev = np.array([0.6, -1.0])
        h = gru_step(np.array([2.0]), h_prev, params)
        np.testing.assert_allclose(h, h_prev, atol=1e-6)

    def test_gru_hand_computed_single_unit(self):
        params = zero_params("gru", hidden=1, inputs=1)
        params.weights["z"][:] = 0.5
        params.weights["r"][:] = -0.3
        params.weights["h"][:] = 0.8
        x, h_prev = np.array([1.0]), np.array([0.4])
        z = 1 / (1 + math.exp(-(0.5 * 0.4 + 0.5 * 1.0)))
        r = 1 / (1 + math.exp(-(-0.3 * 0.4 - 0.3 * 1.0)))
        htilde = math.tanh(0.8 * (r * 0.4) + 0.8 * 1.0)
        expect = (1 - z) * 0.4 + z * htilde
        h = gru_step(x, h_prev, params)
        assert h[0] == pytest.approx(expect, abs=1e-12)

    def test_simple_zero_params(self):
        params = zero_params("simple")
        h = simple_step(np.array([3.0]), np.array([1.0, 1.0]), params, Activation("tanh"))
        np.testing.assert_allclose(h, 0.0, atol=1e-15)

    def test_simple_linear_activation_affine(self):
        params = zero_params("simple", hidden=1, inputs=1)
        params.weights["w"][:] = np.array([[0.5, 2.0]])
        params.biases["w"][:] = 0.25
        h = simple_step(np.array([1.0]), np.array([0.4]), params, Activation("linear"))
        assert h[0] == pytest.approx(0.5 * 0.4 + 2.0 * 1.0 + 0.25)

    def test_simple_relu_clips(self):
        params = zero_params("simple", hidden=1, inputs=1)
        params.weights["w"][:] = np.array([[0.0, -1.0]])
        h = simple_step(np.array([2.0]), np.array([0.0]), params, Activation("relu"))
        assert h[0] == 0.0


class TestForward:
    def test_window_one_equals_step_plus_head(self):
        model = make_model(cell="gru", window=1, hidden=3, seed=5)
        x = np.array([0.7])
        h = gru_step(x, np.zeros(3), model.params)
        expect = float(h @ model.head_w + model.head_b[0])
        assert forward(model, x) == pytest.approx(expect, abs=1e-12)

    def test_bidirectional_palindrome_symmetry(self):
        model = make_model(cell="lstm", window=5, hidden=4, seed=3, bidirectional=True)
        model.params_backward = model.params  # tie the two directions
        window = np.array([0.3, -1.0, 0.5, -1.0, 0.3])
        _, caches, _ = forward_batch(model, window[None, :])
        final = caches["final"][0]
        np.testing.assert_allclose(final[:4], final[4:], atol=1e-12)

    def test_independent_reimplementation_lstm(self, rng):
        model = make_model(cell="lstm", window=6, hidden=3, seed=11)
        window = rng.normal(0, 1, 6)
        h = np.zeros(3)
        c = np.zeros(3)
        W, b = model.params.weights, model.params.biases
        sig = lambda v: 1 / (1 + np.exp(-v))
        for x in window:
            cat = np.r_[h, x]
            f = sig(W["f"] @ cat + b["f"])
            i = sig(W["i"] @ cat + b["i"])
            ct = np.tanh(W["c"] @ cat + b["c"])
            c = f * c + i * ct
            o = sig(W["o"] @ cat + b["o"])
            h = o * np.tanh(c)
        expect = float(h @ model.head_w + model.head_b[0])
        assert forward(model, window) == pytest.approx(expect, abs=1e-12)

    def test_window_mismatch_rejected(self):
        model = make_model(window=4)
        with pytest.raises(ValueError, match="window"):
            forward(model, np.zeros(5))


class TestGradients:
    @pytest.mark.parametrize("cell", ["simple", "lstm", "gru"])
    def test_finite_difference_all_cells(self, cell, rng):
        model = make_model(cell=cell, hidden=3, window=4, seed=1)
        X = rng.normal(0, 1, (5, 4))
        y = rng.normal(0, 1, 5)
        finite_difference_check(model, X, y)

    def test_finite_difference_bidirectional(self, rng):
        model = make_model(cell="lstm", hidden=3, window=4, seed=2, bidirectional=True)
        X = rng.normal(0, 1, (4, 4))
        y = rng.normal(0, 1, 4)
        finite_difference_check(model, X, y)

    def test_finite_difference_relu_simple(self, rng):
        model = make_model(cell="simple", hidden=3, window=4, seed=3,
                           activation=Activation("relu"))
        X = rng.normal(0, 1, (5, 4))
        y = rng.normal(0, 1, 5)
        finite_difference_check(model, X, y)

    def test_zero_loss_gives_zero_gradients(self):
        model = make_model(cell="gru", hidden=2, window=3, seed=4)
        X = np.array([[0.1, -0.2, 0.4]])
        target = np.array([forward(model, X[0])])
        _, grads, _ = bptt_gradients(model, X, target)
        for name, _ in model.parameters():
            np.testing.assert_allclose(grads[name], 0.0, atol=1e-10)

    def test_head_gradient_is_linear_regression_gradient(self, rng):
        # with the recurrent output fixed, the head is plain linear regression
        model = make_model(cell="simple", hidden=2, window=1, seed=6,
                           activation=Activation("linear"))
        X = rng.normal(0, 1, (6, 1))
        y = rng.normal(0, 1, 6)
        preds, caches, _ = forward_batch(model, X)
        features = caches["final"]
        _, grads, _ = bptt_gradients(model, X, y)
        expect = 2.0 / 6 * features.T @ (preds - y)
        np.testing.assert_allclose(grads["head.w"], expect, atol=1e-12)

    def test_empty_batch_rejected(self):
        model = make_model()
        with pytest.raises(ValueError, match="non-empty"):
            bptt_gradients(model, np.zeros((0, 4)), np.zeros(0))


class TestTraining:
    def test_deterministic_bit_identical(self):
        series = np.sin(np.linspace(0, 20, 150))
        runs = []
        for _ in range(2):
            model = make_model(cell="lstm", hidden=4, window=5, seed=7,
                               learning_rate=0.01, epochs=5, batch_size=16)
            model, losses = train(model, series)
            runs.append((dict((n, a.copy()) for n, a in model.parameters()), losses))
        for name in runs[0][0]:
            np.testing.assert_array_equal(runs[0][0][name], runs[1][0][name])
        assert runs[0][1] == runs[1][1]

    def test_loss_decreases_on_trend(self):
        series = np.linspace(0, 10, 120)
        model = make_model(cell="gru", hidden=4, window=4, seed=8,
                           learning_rate=0.01, epochs=20, batch_size=16)
        _, losses = train(model, series)
        assert losses[-1] < losses[0]

    def test_small_lr_loss_non_increasing_first_steps(self):
        series = np.sin(np.linspace(0, 12, 90))
        model = make_model(cell="simple", hidden=3, window=4, seed=9,
                           learning_rate=1e-4, epochs=10, batch_size=len(series))
        _, losses = train(model, series)
        assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))

    def test_standardization_round_trip(self, rng):
        series = rng.normal(40.0, 12.0, 100)
        model = make_model(cell="simple", hidden=2, window=3, seed=10, epochs=1)
        train(model, series)
        restored = ((series - model.mean) / model.std) * model.std + model.mean
        np.testing.assert_allclose(restored, series, atol=1e-10)

    def test_stateful_state_carry_matches_long_unroll(self):
        # aligned windows (stride == window) + carried state == one long unroll
        series = np.sin(np.linspace(0, 8, 33))
        w = 4
        model = make_model(cell="lstm", hidden=3, window=w, seed=12, stateful=True)
        scaled = (series - series[: len(series)].mean()) / series.std()
        windows = np.stack([scaled[k * w : (k + 1) * w] for k in range(8)])
        state = None
        finals = []
        for k in range(8):
            preds, _, state = forward_batch(model, windows[k][None, :], state=state)
            finals.append(preds[0])
        long_model = make_model(cell="lstm", hidden=3, window=8 * w, seed=12)
        long_model.params = model.params
        long_model.head_w, long_model.head_b = model.head_w, model.head_b
        long_pred = forward(long_model, scaled[: 8 * w])
        assert finals[-1] == pytest.approx(long_pred, abs=1e-12)

    def test_stateful_training_runs_and_is_deterministic(self):
        series = np.sin(np.linspace(0, 5, 60))
        results = []
        for _ in range(2):
            model = make_model(cell="lstm", hidden=2, window=4, seed=13,
                               stateful=True, batch_size=8, epochs=3)
            _, losses = train(model, series)
            results.append(losses)
        assert results[0] == results[1]

    def test_stateful_bidirectional_rejected(self):
        with pytest.raises(ValueError, match="stateful"):
            make_model(bidirectional=True, stateful=True)

    def test_sine_learning_desk_scale(self):
        t = np.linspace(0, 16 * np.pi, 400)
        series = np.sin(t)
        model = make_model(cell="lstm", hidden=8, window=8, seed=14,
                           learning_rate=0.01, epochs=60, batch_size=32)
        _, losses = train(model, series)
        assert losses[-1] < 0.05

    def test_series_too_short(self):
        model = make_model(window=10)
        with pytest.raises(ModelError, match="too short"):
            train(model, np.arange(5.0))


class TestPredictSeries:
    def trained_model(self, series, **kw):
        model = make_model(cell="gru", hidden=6, window=5, seed=15,
                           learning_rate=0.01, epochs=30, batch_size=16, **kw)
        model, _ = train(model, series)
        return model

    def test_one_step_length_and_first_value(self, rng):
        series = np.sin(np.linspace(0, 12, 140)) * 3 + 5
        model = self.trained_model(series)
        preds = predict_series(model, series, 20, mode="one_step")
        assert len(preds) == 20
        window = (series[115:120] - model.mean) / model.std
        expect = forward(model, window) * model.std + model.mean
        assert preds[0] == pytest.approx(expect, abs=1e-10)

    def test_recursive_first_step_equals_one_step(self, rng):
        series = np.cos(np.linspace(0, 9, 90))
        model = self.trained_model(series)
        rec = predict_series(model, series, 5, mode="recursive")
        window = (series[-5:] - model.mean) / model.std
        expect = forward(model, window) * model.std + model.mean
        assert rec[0] == pytest.approx(expect, abs=1e-10)

    def test_insufficient_history(self):
        series = np.sin(np.linspace(0, 9, 60))
        model = self.trained_model(series)
        with pytest.raises(ValueError):
            predict_series(model, series[:3], 1, mode="recursive")
        with pytest.raises(ValueError):
            predict_series(model, series[:10], 8, mode="one_step")

    def test_unknown_mode(self):
        series = np.sin(np.linspace(0, 9, 60))
        model = self.trained_model(series)
        with pytest.raises(ValueError, match="mode"):
            predict_series(model, series, 3, mode="oracle")


class TestComponents:
    def test_activation_validation(self):
        with pytest.raises(ValueError):
            Activation("swish")

    def test_truncated_normal_within_two_sigma(self):
        init = Initializer(kind="truncated_normal", mean=0.0, sigma=0.1, seed=1)
        draws = init.sample(np.random.default_rng(1), (4000,))
        assert np.all(np.abs(draws) <= 0.2 + 1e-12)

    def test_initializer_validation(self):
        with pytest.raises(ValueError):
            Initializer(kind="orthogonal")

    def test_forget_gate_bias_default_one(self):
        model = make_model(cell="lstm")
        np.testing.assert_array_equal(model.params.biases["f"], 1.0)

    def test_serialization_round_trip(self, rng):
        series = np.sin(np.linspace(0, 10, 80))
        model = make_model(cell="lstm", hidden=4, window=6, seed=16,
                           bidirectional=True, epochs=3)
        model, _ = train(model, series)
        clone = from_json(to_json(model))
        window = rng.normal(0, 1, 6)
        assert forward(clone, window) == forward(model, window)
        assert clone.mean == model.mean and clone.std == model.std
