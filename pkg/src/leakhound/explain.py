"""LIME surrogates for binary bag-of-words inputs, and importance-based feature selection.

Perturbations keep each active feature with probability one half and switch
an inactive feature on with its corpus activation rate. The surrogate is a
weighted ridge regression on centred data with an unpenalised intercept.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .features import FeatureMatrix, Vocabulary
from .models import TrainConfig, fit_model

PredictFn = Callable[[np.ndarray], np.ndarray]


class SingularSystem(ValueError):
    """No perturbed coordinate varies, so the surrogate is undetermined."""


class EmptySelection(ValueError):
    pass


@dataclass(frozen=True)
class LimeConfig:
    n_perturbations: int = 5000
    kernel_width: float | None = None
    ridge_lambda: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_perturbations < 100:
            raise ValueError("n_perturbations must be >= 100")
        if self.kernel_width is not None and not self.kernel_width > 0:
            raise ValueError("kernel_width must be positive")
        if self.ridge_lambda < 0:
            raise ValueError("ridge_lambda must be nonnegative")

    def width(self, d: int) -> float:
        return self.kernel_width if self.kernel_width is not None else 0.75 * math.sqrt(d)


@dataclass(frozen=True, eq=False)
class Explanation:
    instance_id: str
    importances: np.ndarray
    intercept: float
    surrogate_fidelity: float

    def __post_init__(self):
        imp = np.array(self.importances, dtype=np.float64)
        if imp.ndim != 1 or not np.isfinite(imp).all():
            raise ValueError("importances must be a finite vector")
        imp.setflags(write=False)
        object.__setattr__(self, "importances", imp)


def activation_rates(matrix: FeatureMatrix | np.ndarray) -> np.ndarray:
    values = matrix.values if isinstance(matrix, FeatureMatrix) else np.asarray(matrix)
    return values.mean(axis=0) if len(values) else np.zeros(values.shape[1])


def perturb_instance(x, n: int, seed: int = 0, rates=None) -> np.ndarray:
    """``n`` binary samples around ``x``; row 0 is ``x`` itself."""
    x = np.asarray(x).astype(bool)
    if n < 1:
        raise ValueError("n must be >= 1")
    rates = np.zeros(len(x)) if rates is None else np.asarray(rates, dtype=np.float64)
    rng = np.random.default_rng(seed)
    u = rng.random((n - 1, len(x)))
    rest = np.where(x, u < 0.5, u < rates)
    return np.vstack([x[None, :], rest]).astype(np.uint8)


def kernel_weight(x, p, width: float) -> float | np.ndarray:
    """exp(-D^2 / width^2); ``p`` may be a single vector or a batch of rows."""
    x = np.asarray(x, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    d2 = np.sum((p - x) ** 2, axis=-1)
    w = np.exp(-d2 / (width * width))
    return float(w) if np.ndim(w) == 0 else w


def _weighted_ridge(Z: np.ndarray, f: np.ndarray, w: np.ndarray, lam: float):
    """Coefficients (zero on constant columns), intercept and weighted R^2.

    Weights are normalised to sum to one, so ``lam`` acts against per-sample
    mean squared error and shrinks features that rarely vary.
    """
    Z = Z.astype(np.float64)
    w = w / w.sum()
    mu_z = w @ Z
    mu_f = float(w @ f)
    Zc = Z - mu_z
    fc = f - mu_f
    varies = np.any(Zc != 0, axis=0)
    if not varies.any():
        raise SingularSystem("no perturbed feature varies")
    coef = np.zeros(Z.shape[1])
    A = Zc[:, varies]
    gram = (A * w[:, None]).T @ A + lam * np.eye(A.shape[1])
    coef[varies] = np.linalg.solve(gram, (A * w[:, None]).T @ fc)
    intercept = mu_f - float(mu_z @ coef)
    resid = f - (Z @ coef + intercept)
    ss_tot = float(w @ (fc * fc))
    fidelity = 1.0 if ss_tot == 0 else 1.0 - float(w @ (resid * resid)) / ss_tot
    return coef, intercept, min(1.0, max(0.0, fidelity))


def lime_explain(predict_fn: PredictFn, x, cfg: LimeConfig = LimeConfig(), rates=None,
                 instance_id: str = "") -> Explanation:
    """``predict_fn`` maps a batch of binary rows to probabilities."""
    x = np.asarray(x)
    Z = perturb_instance(x, cfg.n_perturbations, cfg.seed, rates)
    f = np.asarray(predict_fn(Z), dtype=np.float64).reshape(-1)
    if f.shape != (len(Z),):
        raise ValueError("predict_fn must return one probability per row")
    w = kernel_weight(x, Z, cfg.width(len(x)))
    coef, intercept, fidelity = _weighted_ridge(Z, f, w, cfg.ridge_lambda)
    return Explanation(instance_id, coef, intercept, fidelity)


def explain_rows(predict_fn: PredictFn, matrix: FeatureMatrix, rows: Sequence[int],
                 cfg: LimeConfig = LimeConfig(), rates=None, threads: int = 1) -> list[Explanation]:
    """Explain several rows. Each row gets its own seed, so thread count cannot change results."""
    rates = activation_rates(matrix) if rates is None else rates

    def one(k_row):
        k, row = k_row
        seed = int(np.random.SeedSequence([cfg.seed, k]).generate_state(1)[0])
        sub = LimeConfig(cfg.n_perturbations, cfg.kernel_width, cfg.ridge_lambda, seed)
        return lime_explain(predict_fn, matrix.values[row], sub, rates, matrix.rows[row])

    jobs = list(enumerate(rows))
    if threads <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, jobs))


# --- selection -----------------------------------------------------------------

class Heuristic(str, Enum):
    H2 = "H2"
    H3 = "H3"


@dataclass(frozen=True)
class SelectionResult:
    heuristic: Heuristic
    selected: tuple[int, ...]
    n_features: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        sel = tuple(sorted(set(int(j) for j in self.selected)))
        if any(j < 0 or j >= self.n_features for j in sel):
            raise ValueError("selected index out of range")
        object.__setattr__(self, "selected", sel)

    @property
    def degenerate(self) -> bool:
        return not self.selected


def _ceil_frac(a: float, b: int) -> int:
    """ceil(a * b) with ``a`` read as the short decimal it was written as."""
    return math.ceil(Fraction(a).limit_denominator(10**9) * b)


def _abs_matrix(explanations: Sequence[Explanation]) -> np.ndarray:
    if not explanations:
        raise ValueError("need at least one explanation")
    d = {len(e.importances) for e in explanations}
    if len(d) != 1:
        raise ValueError("explanations disagree on feature count")
    return np.abs(np.vstack([e.importances for e in explanations]))


def select_h2(explanations: Sequence[Explanation], percentile: float = 75) -> SelectionResult:
    """Features above a pooled percentile of nonzero |importance| in every sample."""
    A = _abs_matrix(explanations)
    pooled = A[A > 0]
    params = {"percentile": percentile}
    if pooled.size == 0:
        return SelectionResult(Heuristic.H2, (), A.shape[1], params | {"threshold": None})
    threshold = float(np.percentile(pooled, percentile))
    keep = np.all(A > threshold, axis=0)
    return SelectionResult(Heuristic.H2, tuple(np.flatnonzero(keep)), A.shape[1],
                           params | {"threshold": threshold})


def select_h3(explanations: Sequence[Explanation], top_frac: float = 0.2, support: float = 0.75) -> SelectionResult:
    """Features in the per-sample top ``top_frac`` for at least ``support`` of samples."""
    if not 0 < top_frac <= 1 or not 0 < support <= 1:
        raise ValueError("top_frac and support must lie in (0, 1]")
    A = _abs_matrix(explanations)
    n, d = A.shape
    k = _ceil_frac(top_frac, d)
    need = _ceil_frac(support, n)
    counts = np.zeros(d, np.int64)
    idx = np.arange(d)
    for row in A:
        counts[np.lexsort((idx, -row))[:k]] += 1  # ties go to the lower index
    return SelectionResult(Heuristic.H3, tuple(np.flatnonzero(counts >= need)), d,
                           {"top_frac": top_frac, "support": support, "k": k, "min_count": need})


def slice_selected(matrix: FeatureMatrix, selection: SelectionResult) -> FeatureMatrix:
    if selection.degenerate:
        raise EmptySelection(f"{selection.heuristic.value} selected no features")
    if selection.n_features != matrix.shape[1]:
        raise ValueError("selection was made over a different feature set")
    return matrix.select_columns(selection.selected, f"selected={selection.heuristic.value}")


def retrain_selected(matrix: FeatureMatrix, selection: SelectionResult, model_kind: str = "nn",
                     cfg: TrainConfig = TrainConfig(), **fit_kwargs):
    """Refit on the selected columns only; returns (model, training Metrics)."""
    return fit_model(model_kind, slice_selected(matrix, selection), cfg=cfg, **fit_kwargs)


# --- export ------------------------------------------------------------------------

def explanations_to_csv(explanations: Sequence[Explanation], features: Sequence[str]) -> str:
    import csv
    import io

    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(["instance_id", "feature", "importance"])
    for e in explanations:
        for name, v in zip(features, e.importances):
            out.writerow([e.instance_id, name, repr(float(v))])
    return buf.getvalue()


def dump_selection(selection: SelectionResult, vocab: Vocabulary) -> str:
    return "".join(vocab.tokens[j] + "\n" for j in selection.selected)


def parse_selection(text: str, vocab: Vocabulary, heuristic: Heuristic | str = Heuristic.H3) -> SelectionResult:
    index = vocab.index
    names = [line for line in text.splitlines() if line]
    missing = [n for n in names if n not in index]
    if missing:
        raise ValueError(f"selected features not in vocabulary: {missing[:5]}")
    return SelectionResult(Heuristic(heuristic), tuple(index[n] for n in names), len(vocab))


def save_selection(selection: SelectionResult, vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(dump_selection(selection, vocab), encoding="utf-8")
