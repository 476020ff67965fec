"""Feed-forward binary classifier: ReLU hidden layers, sigmoid output, BCE loss, RMSprop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._data import DimensionMismatch, as_xy, require_both_classes
from .metrics import Metrics, evaluate

ARCH_PRESETS: dict[str, tuple[int, ...]] = {
    "paper-reduced": (512, 128, 64),
    "paper-deep": (2048, 1024, 512, 256, 128, 64),
}
BCE_CLAMP = 1e-12
# Keeps the float sigmoid strictly inside (0, 1).
_P_LO, _P_HI = np.finfo(float).tiny, float(np.nextafter(1.0, 0.0))


class NonFiniteLoss(FloatingPointError):
    """Training diverged; usually the learning rate is too high."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1e-3
    gamma: float = 0.9
    epsilon: float = 1e-8
    epochs: int = 50
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 1e-10 <= self.epsilon <= 1e-8:
            raise ValueError("epsilon must lie in [1e-10, 1e-8]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass(frozen=True, eq=False)
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    seed: int = 0
    loss_history: tuple[float, ...] = field(default=(), compare=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes) or sizes[-1] != 1:
            raise ValueError(f"bad layer sizes {sizes}")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer")
        ws, bs = [], []
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64).reshape(-1)
            if w.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise DimensionMismatch(f"layer {k}: weight {w.shape}, bias {b.shape} vs sizes {sizes}")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("parameters must be finite")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"model expects {self.n_features} features, got {X.shape[1]}")
        return _forward(self.weights, self.biases, X)[-1][:, 0]


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return np.clip(out, _P_LO, _P_HI)


def _forward(weights, biases, X: np.ndarray) -> list[np.ndarray]:
    """Activations per layer, input first, sigmoid output last."""
    acts = [X]
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = acts[-1] @ w + b
        acts.append(sigmoid(z) if k == len(weights) - 1 else np.maximum(z, 0.0))
    return acts


def nn_forward(model: MlpModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.n_features:
        raise DimensionMismatch(f"expected a vector of length {model.n_features}, got shape {x.shape}")
    return float(model.predict_proba(x)[0])


def bce_loss(predictions, labels) -> float:
    p = np.clip(np.asarray(predictions, dtype=np.float64).reshape(-1), BCE_CLAMP, 1.0 - BCE_CLAMP)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise DimensionMismatch("predictions and labels differ in length")
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def nn_gradients(weights, biases, X, y) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Mean BCE loss and its gradient with respect to every weight and bias."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    acts = _forward(weights, biases, X)
    loss = bce_loss(acts[-1], y)
    # Sigmoid followed by BCE collapses to (p - y) at the output pre-activation.
    delta = (acts[-1] - y) / len(X)
    gw, gb = [None] * len(weights), [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        gw[k] = acts[k].T @ delta
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ weights[k].T) * (acts[k] > 0)
    return loss, gw, gb


def rmsprop_step(w, grad, v, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    w, grad, v = (np.asarray(a, dtype=np.float64) for a in (w, grad, v))
    if not (w.shape == grad.shape == v.shape):
        raise DimensionMismatch("w, grad and v must share a shape")
    v_new = cfg.gamma * v + (1.0 - cfg.gamma) * grad * grad
    return w - cfg.alpha * grad / (np.sqrt(v_new) + cfg.epsilon), v_new


def resolve_arch(arch: str | Sequence[int]) -> tuple[int, ...]:
    if isinstance(arch, str):
        try:
            return ARCH_PRESETS[arch]
        except KeyError:
            raise ValueError(f"unknown architecture preset {arch!r}; known: {sorted(ARCH_PRESETS)}") from None
    hidden = tuple(int(h) for h in arch)
    if any(h < 1 for h in hidden):
        raise ValueError("hidden layer sizes must be positive")
    return hidden


def init_mlp(layer_sizes: Sequence[int], seed: int = 0) -> MlpModel:
    """He-normal weights scaled by fan-in, zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    sizes = tuple(layer_sizes)
    ws = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(sizes[:-1], sizes[1:])]
    bs = [np.zeros(b) for b in sizes[1:]]
    return MlpModel(sizes, tuple(ws), tuple(bs), seed)


def nn_fit(data, arch: str | Sequence[int] = "paper-reduced", cfg: TrainConfig = TrainConfig(),
           y=None) -> tuple[MlpModel, Metrics]:
    """Mini-batch RMSprop training; returns the model and its training-set Metrics.

    ``loss_history`` on the returned model holds the full-data loss after each
    epoch. ``train_time`` covers only the optimisation loop.
    """
    X, y = as_xy(data, y)
    y = require_both_classes(y)
    X = X.astype(np.float64)
    init = init_mlp((X.shape[1],) + resolve_arch(arch) + (1,), cfg.seed)
    ws, bs = [w.copy() for w in init.weights], [b.copy() for b in init.biases]
    vw, vb = [np.zeros_like(w) for w in ws], [np.zeros_like(b) for b in bs]
    order_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    history = []

    start = time.perf_counter()
    # Overflow is detected explicitly below, so numpy's warnings are redundant.
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(cfg.epochs):
            order = order_rng.permutation(len(X))
            for lo in range(0, len(X), cfg.batch_size):
                batch = order[lo: lo + cfg.batch_size]
                loss, gw, gb = nn_gradients(ws, bs, X[batch], y[batch])
                if not np.isfinite(loss):
                    raise NonFiniteLoss(f"loss became {loss}")
                for k in range(len(ws)):
                    ws[k], vw[k] = rmsprop_step(ws[k], gw[k], vw[k], cfg)
                    bs[k], vb[k] = rmsprop_step(bs[k], gb[k], vb[k], cfg)
            epoch_loss = bce_loss(_forward(ws, bs, X)[-1], y)
            if not (np.isfinite(epoch_loss) and all(np.isfinite(w).all() for w in ws)):
                raise NonFiniteLoss(f"epoch loss became {epoch_loss}")
            history.append(epoch_loss)
    elapsed = time.perf_counter() - start

    model = MlpModel(init.layer_sizes, tuple(ws), tuple(bs), cfg.seed, tuple(history))
    return model, evaluate(model, X, y=y, train_time=elapsed)
