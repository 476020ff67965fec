import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leakhound.features import FeatureMatrix, Vocabulary
from leakhound.models import (Metrics, ModelFormatError, confusion, dt_fit, dump_model, dump_model_text, evaluate,
                              feature_digest, fit_model, init_mlp, load_model, metrics_from_confusion, parse_model,
                              save_model)
from leakhound.models.store import MAGIC


def labelled(X, y):
    d = X.shape[1]
    vocab = Vocabulary(tuple(f"t{j}" for j in range(d)), (1,) * d, (0.0,) * d)
    return FeatureMatrix(tuple(str(i) for i in range(len(X))), vocab, X, y)


class Constant:
    def __init__(self, p):
        self.p = p

    def predict_proba(self, X):
        return np.full(len(X), self.p)


class TestMetrics:
    def test_hand_confusion(self):
        m = metrics_from_confusion(tp=3, fp=1, fn=2, tn=4)
        assert m.precision == 0.75 and m.recall == 0.6
        assert abs(m.f1 - 2 / 3) < 1e-12 and m.accuracy == 0.7

    def test_perfect(self):
        X = np.array([[0], [1]])
        m = evaluate(dt_fit(X, [0, 1]), X, y=[0, 1])
        assert m.accuracy == 1.0 and m.f1 == 1.0

    def test_half_probability_predicts_positive(self):
        m = evaluate(Constant(0.5), np.zeros((4, 1)), y=[0, 1, 0, 1])
        assert m.accuracy == 0.5 and m.recall == 1.0

    def test_empty_denominators(self):
        m = metrics_from_confusion(0, 0, 0, 5)
        assert (m.precision, m.recall, m.f1, m.accuracy) == (0.0, 0.0, 0.0, 1.0)

    def test_confusion_counts(self):
        assert confusion([1, 1, 0, 0], [1, 0, 1, 0]) == (1, 1, 1, 1)

    def test_validation(self):
        with pytest.raises(ValueError):
            Metrics(1.5, 0, 0, 0)
        with pytest.raises(ValueError):
            Metrics(1, 1, 1, 1, train_time=-1)

    def test_needs_labels(self):
        with pytest.raises(ValueError):
            evaluate(Constant(0.5), np.zeros((2, 1)))

    @given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
    def test_fractions_in_unit_interval(self, tp, fp, fn, tn):
        m = metrics_from_confusion(tp, fp, fn, tn)
        assert all(0 <= v <= 1 for v in (m.accuracy, m.precision, m.recall, m.f1))

    def test_fit_model_dispatch(self):
        X = np.array([[0, 1], [1, 0], [1, 1], [0, 0]] * 4)
        y = X[:, 0]
        _, m = fit_model("dt", labelled(X, y))
        assert m.accuracy == 1.0 and m.train_time >= 0
        with pytest.raises(ValueError):
            fit_model("svm", labelled(X, y))


class TestStore:
    def tree(self):
        X = np.array([[0, 0], [0, 1], [1, 0], [1, 1], [1, 1]])
        return dt_fit(X, [0, 1, 1, 0, 1])

    def test_tree_round_trip(self):
        tree = self.tree()
        back, digest = parse_model(dump_model(tree, ["a", "b"]))
        assert back.structure() == tree.structure() and back.n_features == 2
        assert digest == feature_digest(["a", "b"])

    def test_mlp_round_trip(self, tmp_path):
        model = init_mlp((4, 3, 1), seed=9)
        path = tmp_path / "m.lhmd"
        save_model(model, path)
        back, digest = load_model(path)
        assert digest == bytes(32) and back.seed == 9 and back.layer_sizes == (4, 3, 1)
        for a, b in zip(model.weights + model.biases, back.weights + back.biases):
            assert np.array_equal(a, b)

    def test_header_layout(self):
        data = dump_model(init_mlp((2, 1)))
        magic, version, kind = struct.unpack("<4sII", data[:12])
        assert magic == MAGIC == b"LHMD" and version == 1 and kind == 2

    def test_bad_files(self):
        data = dump_model(self.tree())
        with pytest.raises(ModelFormatError):
            parse_model(b"XXXX" + data[4:])
        with pytest.raises(ModelFormatError):
            parse_model(data[:-3])
        with pytest.raises(ModelFormatError):
            parse_model(data + b"\0")
        with pytest.raises(ModelFormatError):
            parse_model(data[:4] + struct.pack("<I", 99) + data[8:])
        with pytest.raises(TypeError):
            dump_model(object())

    def test_text_export(self):
        text = dump_model_text(init_mlp((2, 1), seed=1))
        lines = text.splitlines()
        assert lines[0].startswith("# leakhound-model v1 mlp sizes=2,1")
        w = float.fromhex(lines[1].split()[-1])
        assert w == init_mlp((2, 1), seed=1).weights[0][0, 0]
        assert "node 0 feature=" in dump_model_text(self.tree())

    def test_dump_is_deterministic(self):
        assert dump_model(init_mlp((5, 4, 1), 3)) == dump_model(init_mlp((5, 4, 1), 3))
