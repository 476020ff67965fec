from __future__ import annotations

import numpy as np

from ..features import FeatureMatrix


class DegenerateLabels(ValueError):
    """Training labels contain a single class."""


class DimensionMismatch(ValueError):
    pass


def as_xy(data, y=None) -> tuple[np.ndarray, np.ndarray | None]:
    """Accept a FeatureMatrix or a raw array pair; returns (X float-able, y uint8)."""
    if isinstance(data, FeatureMatrix):
        X, labels = data.values, data.labels
        if y is not None:
            labels = y
    else:
        X, labels = np.asarray(data), y
    X = np.asarray(X)
    if X.ndim != 2:
        raise DimensionMismatch(f"expected a 2-d design matrix, got shape {X.shape}")
    if labels is not None:
        labels = np.asarray(labels).astype(np.uint8).reshape(-1)
        if labels.shape[0] != X.shape[0]:
            raise DimensionMismatch("label count does not match row count")
    return X, labels


def require_both_classes(y: np.ndarray | None) -> np.ndarray:
    if y is None:
        raise ValueError("training data has no labels")
    pos = int(y.sum())
    if pos == 0 or pos == len(y):
        raise DegenerateLabels(f"all {len(y)} labels are {int(pos > 0)}")
    return y
