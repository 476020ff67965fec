from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._data import as_xy


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    train_time: float = 0.0
    n_features: int = 0

    def __post_init__(self):
        for name in ("accuracy", "precision", "recall", "f1"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        if self.train_time < 0:
            raise ValueError("train_time must be nonnegative")

    def with_train_time(self, seconds: float) -> "Metrics":
        return Metrics(self.accuracy, self.precision, self.recall, self.f1, seconds, self.n_features)


def confusion(predicted, actual) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) for boolean vectors."""
    p = np.asarray(predicted, bool)
    a = np.asarray(actual, bool)
    return int(np.sum(p & a)), int(np.sum(p & ~a)), int(np.sum(~p & a)), int(np.sum(~p & ~a))


def metrics_from_confusion(tp: int, fp: int, fn: int, tn: int, train_time: float = 0.0,
                           n_features: int = 0) -> Metrics:
    # Empty denominators score 0, the usual convention for undefined precision/recall.
    total = tp + fp + fn + tn
    accuracy = (tp + tn) / total if total else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(accuracy, precision, recall, f1, train_time, n_features)


def evaluate(model, data, threshold: float = 0.5, y=None, train_time: float = 0.0) -> Metrics:
    """Score ``model`` (anything with ``predict_proba``) on labelled data; p >= threshold is positive."""
    X, labels = as_xy(data, y)
    if labels is None:
        raise ValueError("evaluation data has no labels")
    predicted = model.predict_proba(X) >= threshold
    return metrics_from_confusion(*confusion(predicted, labels == 1), train_time=train_time,
                                  n_features=X.shape[1])
