import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from leakhound.models import (DegenerateLabels, DimensionMismatch, MlpModel, NonFiniteLoss, TrainConfig,
                              bce_loss, init_mlp, nn_fit, nn_forward, nn_gradients, resolve_arch, rmsprop_step)


def rel_error(a, b):
    a, b = np.concatenate([x.ravel() for x in a]), np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def separable(n=80, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, (n, 2)).astype(float)
    y = X[:, 0].astype(int)
    if y.min() == y.max():
        y[0] = 1 - y[0]
        X[0, 0] = y[0]
    return X, y


class TestForward:
    def test_zero_model_is_half(self):
        model = MlpModel((3, 2, 1), (np.zeros((3, 2)), np.zeros((2, 1))), (np.zeros(2), np.zeros(1)))
        assert nn_forward(model, [1, 0, 1]) == 0.5
        assert nn_forward(model, [0, 0, 0]) == 0.5

    def test_single_hidden_unit_by_hand(self):
        # h = relu(0.5*x0 - 0.25*x1 + 0.1); out = sigmoid(2*h - 0.3)
        model = MlpModel((2, 1, 1), (np.array([[0.5], [-0.25]]), np.array([[2.0]])),
                         (np.array([0.1]), np.array([-0.3])))
        h = max(0.5 * 1 - 0.25 * 1 + 0.1, 0.0)
        expected = 1 / (1 + math.exp(-(2 * h - 0.3)))
        assert abs(nn_forward(model, [1, 1]) - expected) < 1e-12
        assert abs(nn_forward(model, [0, 1]) - 1 / (1 + math.exp(0.3))) < 1e-12

    def test_dimension_mismatch(self):
        model = init_mlp((3, 2, 1))
        with pytest.raises(DimensionMismatch):
            nn_forward(model, [1, 0])
        with pytest.raises(DimensionMismatch):
            model.predict_proba(np.zeros((2, 4)))

    def test_model_validation(self):
        with pytest.raises(ValueError):
            MlpModel((2, 2), (np.zeros((2, 2)),), (np.zeros(2),))
        with pytest.raises(DimensionMismatch):
            MlpModel((2, 1), (np.zeros((3, 1)),), (np.zeros(1),))
        with pytest.raises(ValueError):
            MlpModel((1, 1), (np.full((1, 1), np.nan),), (np.zeros(1),))

    @given(arrays(np.float64, 4, elements=st.floats(-1e6, 1e6)), st.integers(0, 100))
    def test_output_strictly_inside_unit_interval(self, x, seed):
        model = init_mlp((4, 5, 1), seed)
        scaled = MlpModel(model.layer_sizes, tuple(w * 50 for w in model.weights), model.biases)
        for m in (model, scaled):
            p = nn_forward(m, x)
            assert 0.0 < p < 1.0


class TestLoss:
    def test_half(self):
        assert abs(bce_loss([0.5] * 6, [0, 1, 1, 0, 1, 0]) - math.log(2)) < 1e-12

    def test_hand_example(self):
        expected = -0.5 * (math.log(0.9) + math.log(0.8))
        assert abs(bce_loss([0.9, 0.2], [1, 0]) - expected) < 1e-12
        assert round(expected, 6) == 0.164252

    def test_perfect_predictions_at_clamp(self):
        assert bce_loss([1.0, 0.0], [1, 0]) < 1e-10

    def test_length_mismatch(self):
        with pytest.raises(DimensionMismatch):
            bce_loss([0.5], [1, 0])

    @given(st.floats(0.001, 0.999), st.integers(0, 1))
    def test_minimised_at_label(self, p, y):
        assert bce_loss([float(y)], [y]) <= bce_loss([p], [y])


class TestGradients:
    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_central_differences(self, seed):
        ws, bs, X, y = oracles.random_network(np.random.default_rng(seed))
        loss, gw, gb = nn_gradients(ws, bs, X, y)
        nw, nb = oracles.central_differences(ws, bs, X, y)
        assert abs(loss - oracles.mlp_loss(ws, bs, X, y)) < 1e-12
        assert rel_error(gw + gb, nw + nb) < 1e-4


class TestRmsprop:
    CFG = TrainConfig(alpha=0.01, gamma=0.9, epsilon=1e-8)

    def test_hand_values(self):
        w, v = rmsprop_step(np.array(1.0), np.array(2.0), np.array(0.0), self.CFG)
        assert abs(v - 0.4) < 1e-12
        assert abs(w - (1 - 0.01 * 2 / (math.sqrt(0.4) + 1e-8))) < 1e-12
        assert round(float(w), 6) == 0.968377

    def test_zero_grad(self):
        w, v = rmsprop_step(np.array([3.0]), np.array([0.0]), np.array([0.5]), self.CFG)
        assert w[0] == 3.0 and abs(v[0] - 0.45) < 1e-15

    def test_two_steps_closed_form(self):
        g, gamma, alpha, eps = 2.0, 0.9, 0.01, 1e-8
        w, v = np.array(1.0), np.array(0.0)
        for _ in range(2):
            w, v = rmsprop_step(w, np.array(g), v, self.CFG)
        v1 = (1 - gamma) * g * g
        v2 = gamma * v1 + (1 - gamma) * g * g
        w2 = 1 - alpha * g / (math.sqrt(v1) + eps) - alpha * g / (math.sqrt(v2) + eps)
        assert abs(v - v2) < 1e-12 and abs(w - w2) < 1e-12

    def test_shape_check(self):
        with pytest.raises(DimensionMismatch):
            rmsprop_step(np.zeros(2), np.zeros(3), np.zeros(2), self.CFG)

    @given(arrays(np.float64, 5, elements=st.floats(-1e3, 1e3)), arrays(np.float64, 5, elements=st.floats(0, 1e3)))
    def test_state_nonnegative(self, grad, v):
        _, v_new = rmsprop_step(np.zeros(5), grad, v, self.CFG)
        assert (v_new >= 0).all()


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(alpha=0), dict(gamma=1.0), dict(gamma=0.0), dict(epsilon=1e-7),
                                        dict(epsilon=1e-11), dict(epochs=0), dict(batch_size=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_arch_presets(self):
        assert resolve_arch("paper-reduced") == (512, 128, 64)
        assert resolve_arch("paper-deep") == (2048, 1024, 512, 256, 128, 64)
        assert resolve_arch([8, 4]) == (8, 4)
        with pytest.raises(ValueError):
            resolve_arch("huge")
        with pytest.raises(ValueError):
            resolve_arch([0])


class TestFit:
    def test_separable_reaches_full_accuracy(self):
        X, y = separable()
        model, metrics = nn_fit(X, (8,), TrainConfig(alpha=0.01, epochs=200, batch_size=16), y=y)
        assert metrics.accuracy == 1.0 and metrics.train_time > 0
        assert len(model.loss_history) == 200

    def test_loss_mostly_nonincreasing(self):
        X, y = separable()
        model, _ = nn_fit(X, (8,), TrainConfig(alpha=0.01, epochs=100, batch_size=16), y=y)
        h = model.loss_history
        upticks = sum(b > a for a, b in zip(h, h[1:]))
        assert upticks <= 0.05 * len(h) and h[-1] < h[0]

    def test_deterministic(self):
        X, y = separable()
        cfg = TrainConfig(epochs=5, seed=3)
        a, _ = nn_fit(X, (6, 3), cfg, y=y)
        b, _ = nn_fit(X, (6, 3), cfg, y=y)
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(wa, wb)
        c, _ = nn_fit(X, (6, 3), TrainConfig(epochs=5, seed=4), y=y)
        assert not np.array_equal(a.weights[0], c.weights[0])

    def test_degenerate_labels(self):
        with pytest.raises(DegenerateLabels):
            nn_fit(np.zeros((4, 2)), (2,), y=[1, 1, 1, 1])

    def test_divergence_raises(self):
        X, y = separable()
        with pytest.raises(NonFiniteLoss):
            nn_fit(X, (8,), TrainConfig(alpha=1e300, epochs=3), y=y)

    def test_init_is_he_scaled(self):
        model = init_mlp((400, 300, 1), seed=1)
        assert abs(model.weights[0].std() - math.sqrt(2 / 400)) < 0.005
        assert all((b == 0).all() for b in model.biases)
