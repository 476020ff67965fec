"""Classifiers: a pruned CART tree and a ReLU/sigmoid MLP trained with RMSprop."""

from __future__ import annotations

import time

from ._data import DegenerateLabels, DimensionMismatch
from .metrics import Metrics, confusion, evaluate, metrics_from_confusion
from .mlp import (ARCH_PRESETS, MlpModel, NonFiniteLoss, TrainConfig, bce_loss, init_mlp, nn_fit,
                  nn_forward, nn_gradients, resolve_arch, rmsprop_step)
from .store import (ModelFormatError, dump_model, dump_model_text, feature_digest, load_model,
                    parse_model, save_model)
from .tree import DecisionTree, PruningPath, PruningStep, ccp_path, collapse, dt_fit

MODEL_KINDS = ("dt", "nn")


def fit_model(kind: str, data, *, arch="paper-reduced", cfg: TrainConfig = TrainConfig(),
              max_depth: int | None = None, min_samples_leaf: int = 1):
    """Dispatch on ``kind`` ("dt" or "nn"); returns (model, training Metrics)."""
    if kind == "nn":
        return nn_fit(data, arch, cfg)
    if kind == "dt":
        start = time.perf_counter()
        tree = dt_fit(data, max_depth=max_depth, min_samples_leaf=min_samples_leaf)
        elapsed = time.perf_counter() - start
        return tree, evaluate(tree, data, train_time=elapsed)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


__all__ = [
    "ARCH_PRESETS", "MODEL_KINDS", "DecisionTree", "DegenerateLabels", "DimensionMismatch", "Metrics",
    "MlpModel", "ModelFormatError", "NonFiniteLoss", "PruningPath", "PruningStep", "TrainConfig",
    "bce_loss", "ccp_path", "collapse", "confusion", "dt_fit", "dump_model", "dump_model_text",
    "evaluate", "feature_digest", "fit_model", "init_mlp", "load_model", "metrics_from_confusion",
    "nn_fit", "nn_forward", "nn_gradients", "parse_model", "resolve_arch", "rmsprop_step", "save_model",
]
