import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import conv1d_loops, finite_difference_grads, max_relative_error
from wavecnn import network
from wavecnn.data import LabeledMatrix
from wavecnn.network import (AdamState, ConvSpec, EarlyStopping, ModelSpec, TrainConfig,
                             TrainingDivergedError, activation_eval, adam_step, backward, bce_loss,
                             conv1d_backward, conv1d_forward, forward, init_params, predict_proba,
                             train, wave_cnn_spec, zero_params)


def tiny_spec(activation="swish"):
    return ModelSpec(10, (ConvSpec(2, 1, 1), ConvSpec(3, 5, 5)), activation)


def loss_at(spec, X, y):
    return lambda p: bce_loss(predict_proba(spec, p, X), y)


class TestConv:
    def test_segment_dot_products(self):
        x = np.arange(1, 21, dtype=float)
        w = np.array([2.0, -1.0, 0.5, 3.0, 1.0])
        out = conv1d_forward(x.reshape(1, 20, 1), w.reshape(1, 5, 1), np.zeros(1), 5)
        expected = [float(np.dot(x[5 * j:5 * j + 5], w)) for j in range(4)]
        assert out.shape == (1, 4, 1) and out[0, :, 0].tolist() == expected

    def test_all_ones(self):
        out = conv1d_forward(np.ones((1, 20, 1)), np.ones((1, 5, 1)), np.zeros(1), 5)
        assert out[0, :, 0].tolist() == [5.0, 5.0, 5.0, 5.0]

    def test_difference_kernel(self):
        x = np.arange(1, 11, dtype=float).reshape(1, 10, 1)
        out = conv1d_forward(x, np.array([1.0, 0, 0, 0, -1]).reshape(1, 5, 1), np.zeros(1), 5)
        assert out[0, :, 0].tolist() == [-4.0, -4.0]

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10**6), S=st.integers(1, 4), stride=st.integers(1, 3),
           C=st.integers(1, 3), K=st.integers(1, 3), steps=st.integers(1, 5))
    def test_matches_loops(self, seed, S, stride, C, K, steps):
        r = np.random.default_rng(seed)
        L = S + stride * (steps - 1)
        x = r.normal(size=(L, C))
        kernel, bias = r.normal(size=(K, S, C)), r.normal(size=K)
        out = conv1d_forward(x[None], kernel, bias, stride)[0]
        np.testing.assert_allclose(out, conv1d_loops(x, kernel, bias, stride), rtol=1e-12, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10**6), S=st.integers(1, 4), stride=st.integers(1, 3),
           C=st.integers(1, 3), steps=st.integers(1, 4))
    def test_backward_matches_fd(self, seed, S, stride, C, steps):
        r = np.random.default_rng(seed)
        L = S + stride * (steps - 1)
        x, kernel, bias = r.normal(size=(2, L, C)), r.normal(size=(2, S, C)), r.normal(size=2)
        g = r.normal(size=(2, steps, 2))
        dx, dk, db = conv1d_backward(g, x, kernel, stride)
        f = lambda p: float(np.sum(g * conv1d_forward(p["x"], p["k"], p["b"], stride)))
        fd = finite_difference_grads(f, {"x": x.copy(), "k": kernel.copy(), "b": bias.copy()})
        assert max_relative_error({"x": dx, "k": dk, "b": db}, fd) < 1e-6

    def test_stride_segments_independent(self):
        r = np.random.default_rng(0)
        x = r.normal(size=(1, 20, 1))
        kernel, bias = r.normal(size=(3, 5, 1)), r.normal(size=3)
        base = conv1d_forward(x, kernel, bias, 5)
        for j in range(4):
            bumped = x.copy()
            bumped[0, 5 * j:5 * j + 5, 0] += r.normal(size=5)
            changed = np.any(conv1d_forward(bumped, kernel, bias, 5) != base, axis=2)[0]
            assert changed.tolist() == [p == j for p in range(4)]

    def test_shape_errors_name_layer(self):
        with pytest.raises(ValueError, match="conv1.*channels"):
            conv1d_forward(np.zeros((1, 10, 2)), np.zeros((1, 5, 1)), np.zeros(1), 5, "conv1")
        with pytest.raises(ValueError, match="incompatible"):
            conv1d_forward(np.zeros((1, 11, 1)), np.zeros((1, 5, 1)), np.zeros(1), 5)


class TestActivations:
    def test_zero_and_clip(self):
        assert activation_eval("swish", 0.0)[0] == 0.0
        assert activation_eval("relu", -3.0)[0] == 0.0
        assert activation_eval("selu", 0.0)[0] == 0.0

    def test_closed_forms(self):
        assert activation_eval("elu", -1.0)[0] == pytest.approx(math.exp(-1) - 1, abs=1e-12)
        assert activation_eval("elu", -1.0)[0] == pytest.approx(-0.63212, abs=1e-5)
        assert activation_eval("selu", 1.0)[0] == pytest.approx(1.05070, abs=1e-5)
        assert activation_eval("leaky_relu", -2.0)[0] == pytest.approx(-0.02)

    def test_unknown(self):
        with pytest.raises(ValueError, match="swish"):
            activation_eval("gelu", 0.0)

    @pytest.mark.parametrize("name", sorted(network.ACTIVATIONS))
    def test_derivatives(self, name):
        x = np.array([-3.0, -0.7, -0.1, 0.2, 1.3, 4.0])
        h = 1e-6
        fd = (activation_eval(name, x + h)[0] - activation_eval(name, x - h)[0]) / (2 * h)
        np.testing.assert_allclose(activation_eval(name, x)[1], fd, rtol=1e-6, atol=1e-8)

    def test_swish_derivative_formula(self):
        x = 0.8
        s = 1 / (1 + math.exp(-x))
        assert activation_eval("swish", x)[1] == pytest.approx(s + x * s * (1 - s), rel=1e-12)


class TestForward:
    def test_zero_network(self):
        spec = wave_cnn_spec(3)
        probs, _ = forward(spec, zero_params(spec), np.random.default_rng(0).normal(size=(4, 15)))
        assert probs.tolist() == [0.5] * 4

    def test_batch_independence(self):
        spec = tiny_spec()
        p = init_params(spec, 1)
        row = np.random.default_rng(2).normal(size=(1, 10))
        probs = predict_proba(spec, p, np.vstack([row, row, row]))
        assert probs[0] == probs[1] == probs[2] == predict_proba(spec, p, row)[0]

    def test_wave_architecture_shapes(self):
        spec = wave_cnn_spec(52)
        assert spec.layer_shapes() == [(260, 1), (260, 8), (52, 16)]
        assert spec.flat_size == 832
        assert spec.param_shapes()["dense.w"] == (832, 1)
        probs, cache = forward(spec, init_params(spec, 0), np.zeros((2, 260)))
        assert [h.shape for h in cache.inputs] == [(2, 260, 1), (2, 260, 8)]
        assert cache.flat.shape == (2, 832) and probs.shape == (2,)

    def test_dense_bias_monotone(self):
        spec = tiny_spec()
        p = init_params(spec, 3)
        X = np.random.default_rng(4).normal(size=(5, 10))
        low = predict_proba(spec, p, X)
        p["dense.b"] = p["dense.b"] + 0.5
        assert np.all(predict_proba(spec, p, X) > low)

    def test_predict_matches_forward(self):
        spec = tiny_spec("elu")
        p = init_params(spec, 5)
        X = np.random.default_rng(6).normal(size=(7, 10))
        assert np.array_equal(predict_proba(spec, p, X), forward(spec, p, X)[0])

    def test_rejects_non_finite(self):
        spec = tiny_spec()
        X = np.zeros((1, 10))
        X[0, 3] = np.nan
        with pytest.raises(FloatingPointError, match="input"):
            forward(spec, init_params(spec), X)

    def test_rejects_wrong_length(self):
        spec = tiny_spec()
        with pytest.raises(ValueError, match="does not match"):
            forward(spec, init_params(spec), np.zeros((1, 11)))

    def test_bad_topology(self):
        with pytest.raises(ValueError, match="incompatible"):
            ModelSpec(12, (ConvSpec(2, 5, 5),))

    def test_glorot_limits(self):
        spec = wave_cnn_spec(52)
        p = init_params(spec, 0)
        assert np.abs(p["conv1.w"]).max() <= math.sqrt(6 / (5 * 8 + 5 * 16))
        assert np.abs(p["dense.w"]).max() <= math.sqrt(6 / 833)
        assert all(not p[k].any() for k in p if k.endswith(".b"))


class TestLoss:
    def test_perfect(self):
        assert bce_loss([1.0, 0.0], [1, 0]) < 1e-6

    def test_half(self):
        assert bce_loss([0.5] * 4, [0, 1, 1, 0]) == pytest.approx(math.log(2), abs=1e-12)
        assert bce_loss([0.5], [1]) == pytest.approx(0.69315, abs=1e-5)

    def test_clamped_boundary(self):
        assert bce_loss([0.0, 1.0], [1, 0]) == pytest.approx(-math.log(1e-7), rel=1e-6)
        assert bce_loss([0.0], [1]) == pytest.approx(16.118, abs=1e-3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            bce_loss([0.5, 0.5], [1])


def random_tiny_model(seed):
    r = np.random.default_rng(seed)
    act = sorted(network.ACTIVATIONS)[seed % 5]
    spec = ModelSpec(10, (ConvSpec(2, 1, 1), ConvSpec(2, 5, 5)), act)
    params = {k: r.normal(0, 0.5, size=v) for k, v in spec.param_shapes().items()}
    X = r.normal(size=(int(r.integers(1, 7)), 10))
    y = r.integers(0, 2, size=len(X))
    return spec, params, X, y


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    def test_gradients_match_fd(self, seed):
        spec, params, X, y = random_tiny_model(seed)
        probs, cache = forward(spec, params, X)
        analytic = backward(spec, params, cache, y)
        numeric = finite_difference_grads(loss_at(spec, X, y), {k: v.copy() for k, v in params.items()})
        assert max_relative_error(analytic, numeric) < 1e-4

    def test_zero_input_kernel_gradient(self):
        spec = ModelSpec(10, (ConvSpec(2, 5, 5),), "relu")
        p = init_params(spec, 0)
        p["conv0.b"] = np.array([0.3, 0.4])
        _, cache = forward(spec, p, np.zeros((3, 10)))
        g = backward(spec, p, cache, np.array([1, 0, 1]))
        assert not g["conv0.w"].any()
        assert g["conv0.b"].any() and g["dense.b"].any()

    def test_duplicated_batch(self):
        spec, params, X, y = random_tiny_model(7)
        _, c1 = forward(spec, params, X)
        _, c2 = forward(spec, params, np.vstack([X, X]))
        g1 = backward(spec, params, c1, y)
        g2 = backward(spec, params, c2, np.r_[y, y])
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-12, atol=1e-15)

    def test_mismatched_cache(self):
        spec, params, X, y = random_tiny_model(8)
        _, cache = forward(spec, params, X)
        with pytest.raises(ValueError, match="cache"):
            backward(spec, {k: v.copy() for k, v in params.items()}, cache, y)
        with pytest.raises(ValueError, match="cache"):
            backward(tiny_spec("relu"), params, cache, y)


class TestAdam:
    def test_first_step(self):
        p, s = adam_step({"w": np.zeros(1)}, {"w": np.ones(1)}, AdamState.zeros_like({"w": np.zeros(1)}))
        assert p["w"][0] == pytest.approx(-0.01, abs=1e-6) and s.t == 1

    def test_zero_gradient(self):
        params = {"w": np.array([1.0, -2.0])}
        p, _ = adam_step(params, {"w": np.zeros(2)}, AdamState.zeros_like(params))
        assert np.array_equal(p["w"], params["w"])

    def test_scale_invariant_first_step(self):
        params = {"w": np.zeros(3)}
        g = np.array([0.3, -2.0, 5.0])
        state = AdamState.zeros_like(params)
        a, _ = adam_step(params, {"w": g}, state)
        b, _ = adam_step(params, {"w": 10 * g}, state)
        np.testing.assert_allclose(np.abs(a["w"]), 0.01, rtol=1e-6)
        np.testing.assert_allclose(a["w"], b["w"], rtol=1e-6)

    def test_shape_mismatch(self):
        params = {"w": np.zeros(2)}
        with pytest.raises(ValueError, match="shape"):
            adam_step(params, {"w": np.zeros(3)}, AdamState.zeros_like(params))

    def test_inputs_untouched(self):
        params = {"w": np.zeros(2)}
        state = AdamState.zeros_like(params)
        adam_step(params, {"w": np.ones(2)}, state)
        assert not params["w"].any() and state.t == 0 and not state.m["w"].any()


def test_one_small_step_reduces_loss():
    ok = 0
    seeds = range(100)
    for seed in seeds:
        r = np.random.default_rng(seed)
        spec = tiny_spec(sorted(network.ACTIVATIONS)[seed % 5])
        params = init_params(spec, seed)
        X, y = r.normal(size=(16, 10)), r.integers(0, 2, size=16)
        probs, cache = forward(spec, params, X)
        new, _ = adam_step(params, backward(spec, params, cache, y),
                           AdamState.zeros_like(params, lr=1e-3))
        ok += bce_loss(predict_proba(spec, new, X), y) <= bce_loss(probs, y)
    assert ok >= 95


def separable(n=200, seed=0):
    r = np.random.default_rng(seed)
    y = r.integers(0, 2, size=n)
    X = r.normal(0, 0.3, size=(n, 10)) + np.where(y[:, None] == 1, 1.0, -1.0)
    return LabeledMatrix(X, y)


class TestTrain:
    def test_separable_toy(self):
        spec = wave_cnn_spec(2, 5)
        _, history = train(spec, separable(), separable(seed=1), TrainConfig(max_epochs=50, seed=0))
        assert max(history.column("train_accuracy")) >= 0.95

    def test_deterministic(self):
        spec = tiny_spec()
        cfg = TrainConfig(max_epochs=5, seed=3)
        a, ha = train(spec, separable(60), separable(40, 1), cfg)
        b, hb = train(spec, separable(60), separable(40, 1), cfg)
        assert all(np.array_equal(a[k], b[k]) for k in a) and ha.rows == hb.rows

    def test_best_is_min_val_loss(self):
        spec = tiny_spec("relu")
        best, history = train(spec, separable(80), separable(40, 1), TrainConfig(max_epochs=15, seed=0))
        losses = history.column("val_loss")
        assert history.best_epoch == int(np.argmin(losses)) + 1
        assert bce_loss(predict_proba(spec, best, separable(40, 1).X), separable(40, 1).y) == min(losses)

    def test_scripted_stopping(self, monkeypatch):
        trace = [1.0, 0.9, 0.8, 0.7, 0.75, 0.7, 0.71, 0.5, 0.4]
        snapshots = []

        def scripted(spec, params, data):
            snapshots.append({k: v.copy() for k, v in params.items()})
            return trace[len(snapshots) - 1], 0.5, 0.5

        monkeypatch.setattr(network, "_evaluate", scripted)
        spec = tiny_spec()
        best, history = train(spec, separable(40), separable(20, 1), TrainConfig(patience=3, max_epochs=50))
        assert history.stopped_epoch == 7 and history.best_epoch == 4
        assert len(history.rows) == 7
        assert all(np.array_equal(best[k], snapshots[3][k]) for k in best)

    def test_early_stopping_equal_is_not_improvement(self):
        es = EarlyStopping(2)
        assert es.update(1, 0.5) and not es.update(2, 0.5) and not es.update(3, 0.4 + 0.1)
        assert es.should_stop and es.best_epoch == 1

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        spec = tiny_spec()
        data = separable(40)
        huge = {k: np.full(v, 1e200) for k, v in spec.param_shapes().items()}
        with pytest.raises(TrainingDivergedError, match="epoch 1, batch 0"):
            train(spec, data, data, TrainConfig(max_epochs=1), params=huge)

    def test_feature_dimension_checked(self):
        with pytest.raises(ValueError, match="feature dimension"):
            train(tiny_spec(), LabeledMatrix(np.zeros((4, 9)), np.array([0, 1, 0, 1])),
                  LabeledMatrix(np.zeros((2, 9)), np.array([0, 1])))

    @pytest.mark.parametrize("kwargs", [{"patience": 0}, {"batch_size": 0}, {"learning_rate": -1}])
    def test_config_validated(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)
