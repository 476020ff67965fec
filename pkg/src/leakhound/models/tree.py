"""CART decision tree on binary features, with minimal cost-complexity pruning.

Splits test ``x[feature] == 1``; matching samples go right. Node arrays are
stored in preorder with the left subtree first, so the layout is a pure
function of the training data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._data import as_xy, require_both_classes

LEAF = -1
_TIE_RTOL = 1e-9


class TreeNode(NamedTuple):
    feature_index: int
    left: int
    right: int
    gini: float
    n_samples: int
    positive_fraction: float


@dataclass(frozen=True, eq=False)
class DecisionTree:
    feature: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    n_positive: np.ndarray
    n_features: int

    def __post_init__(self):
        for name in ("feature", "left", "right", "n_samples", "n_positive"):
            arr = np.array(getattr(self, name), dtype=np.int64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        internal = self.feature != LEAF
        if np.any(self.n_samples[internal] != self.n_samples[self.left[internal]] + self.n_samples[self.right[internal]]):
            raise ValueError("child sample counts must sum to the parent's")

    @property
    def node_count(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature == LEAF))

    @property
    def positive_fraction(self) -> np.ndarray:
        return self.n_positive / np.maximum(self.n_samples, 1)

    @property
    def gini(self) -> np.ndarray:
        p = self.positive_fraction
        return 2.0 * p * (1.0 - p)

    @property
    def nodes(self) -> list[TreeNode]:
        g, pf = self.gini, self.positive_fraction
        return [TreeNode(int(self.feature[i]), int(self.left[i]), int(self.right[i]),
                         float(g[i]), int(self.n_samples[i]), float(pf[i]))
                for i in range(self.node_count)]

    def depth(self) -> int:
        depth = np.zeros(self.node_count, np.int64)
        for i in range(self.node_count):  # preorder: parents precede children
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            from ._data import DimensionMismatch
            raise DimensionMismatch(f"tree expects {self.n_features} features, got {X.shape[1]}")
        node = np.zeros(len(X), np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] != LEAF
        while active.any():
            r, nd = rows[active], node[active]
            go_right = X[r, self.feature[nd]] != 0
            node[r] = np.where(go_right, self.right[nd], self.left[nd])
            active = self.feature[node] != LEAF
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.positive_fraction[self.apply(X)]

    def structure(self) -> tuple:
        """Nested (feature, left, right) tuples with leaves as (n_samples, n_positive)."""
        def walk(i):
            if self.feature[i] == LEAF:
                return (int(self.n_samples[i]), int(self.n_positive[i]))
            return (int(self.feature[i]), walk(self.left[i]), walk(self.right[i]))
        return walk(0)


def _best_split(Xn: np.ndarray, yn: np.ndarray, min_leaf: int) -> int:
    """Feature minimising weighted child Gini; lowest index wins exact ties, -1 if none valid."""
    n = len(yn)
    pos = int(yn.sum())
    n_r = Xn.sum(axis=0, dtype=np.int64)
    p_r = Xn[yn == 1].sum(axis=0, dtype=np.int64)
    n_l, p_l = n - n_r, pos - p_r
    valid = (n_r >= min_leaf) & (n_l >= min_leaf)
    if not valid.any():
        return -1
    # Minimising n*Gini_split is maximising sum over children of (p^2 + q^2) / n_child.
    with np.errstate(divide="ignore", invalid="ignore"):
        score = ((p_l**2 + (n_l - p_l) ** 2) / n_l + (p_r**2 + (n_r - p_r) ** 2) / n_r).astype(float)
    score[~valid] = -np.inf
    best = score.max()
    cands = np.flatnonzero(score >= best - _TIE_RTOL * abs(best))
    if len(cands) == 1:
        return int(cands[0])

    def exact(j):  # score * n_l * n_r as integers
        a, b = int(n_l[j]), int(n_r[j])
        pl, pr = int(p_l[j]), int(p_r[j])
        return (pl * pl + (a - pl) ** 2) * b + (pr * pr + (b - pr) ** 2) * a, a * b

    winner, (num, den) = int(cands[0]), exact(cands[0])
    for j in cands[1:]:
        nj, dj = exact(j)
        if nj * den > num * dj:
            winner, num, den = int(j), nj, dj
    return winner


def dt_fit(data, y=None, *, max_depth: int | None = None, min_samples_leaf: int = 1) -> DecisionTree:
    """Greedy Gini tree; accepts a labelled FeatureMatrix or (X, y)."""
    X, y = as_xy(data, y)
    y = require_both_classes(y)
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    if max_depth is not None and max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    X = X != 0
    feature, left, right, n_samples, n_positive = [], [], [], [], []

    # (row indices, depth, parent id, is_right)
    stack = [(np.arange(len(y)), 0, -1, False)]
    while stack:
        idx, depth, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        yn = y[idx]
        pos = int(yn.sum())
        feature.append(LEAF)
        left.append(LEAF)
        right.append(LEAF)
        n_samples.append(len(idx))
        n_positive.append(pos)
        if pos == 0 or pos == len(idx) or (max_depth is not None and depth >= max_depth):
            continue
        Xn = X[idx]
        j = _best_split(Xn, yn, min_samples_leaf)
        if j < 0:
            continue
        feature[node] = j
        go_right = Xn[:, j]
        stack.append((idx[go_right], depth + 1, node, True))
        stack.append((idx[~go_right], depth + 1, node, False))  # popped first
    return DecisionTree(np.array(feature), np.array(left), np.array(right),
                        np.array(n_samples), np.array(n_positive), X.shape[1])


def collapse(tree: DecisionTree, collapsed) -> DecisionTree:
    """Copy of ``tree`` with every node in ``collapsed`` turned into a leaf, renumbered in preorder."""
    collapsed = set(int(i) for i in collapsed)
    feature, left, right, n_samples, n_positive = [], [], [], [], []
    stack = [(0, -1, False)]
    while stack:
        old, parent, is_right = stack.pop()
        node = len(feature)
        if parent >= 0:
            (right if is_right else left)[parent] = node
        leaf = tree.feature[old] == LEAF or old in collapsed
        feature.append(LEAF if leaf else int(tree.feature[old]))
        left.append(LEAF)
        right.append(LEAF)
        n_samples.append(int(tree.n_samples[old]))
        n_positive.append(int(tree.n_positive[old]))
        if not leaf:
            stack.append((int(tree.right[old]), node, True))
            stack.append((int(tree.left[old]), node, False))
    return DecisionTree(np.array(feature), np.array(left), np.array(right),
                        np.array(n_samples), np.array(n_positive), tree.n_features)


class PruningStep(NamedTuple):
    ccp_alpha: float
    tree: DecisionTree
    train_acc: float
    test_acc: float | None


@dataclass(frozen=True)
class PruningPath:
    steps: tuple[PruningStep, ...]

    def __len__(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, i):
        return self.steps[i]

    @property
    def alphas(self) -> list[float]:
        return [s.ccp_alpha for s in self.steps]

    @property
    def node_counts(self) -> list[int]:
        return [s.tree.node_count for s in self.steps]

    def best(self) -> PruningStep:
        """Step with the highest test accuracy (train accuracy if no test set); ties prefer the smaller tree."""
        key = (lambda s: s.test_acc) if self.steps[0].test_acc is not None else (lambda s: s.train_acc)
        top = max(key(s) for s in self.steps)
        return [s for s in self.steps if key(s) == top][-1]

    def to_csv(self) -> str:
        lines = ["ccp_alpha,node_count,n_leaves,train_acc,test_acc"]
        for s in self.steps:
            test = "" if s.test_acc is None else f"{s.test_acc:.6f}"
            lines.append(f"{s.ccp_alpha!r},{s.tree.node_count},{s.tree.n_leaves},{s.train_acc:.6f},{test}")
        return "\n".join(lines) + "\n"


def _accuracy(tree: DecisionTree, data) -> float | None:
    if data is None:
        return None
    X, y = as_xy(*data) if isinstance(data, tuple) else as_xy(data)
    if y is None or len(y) == 0:
        return None
    return float(np.mean((tree.predict_proba(X) >= 0.5) == (y == 1)))


def _effective_alphas(tree: DecisionTree, collapsed: np.ndarray) -> np.ndarray:
    """g(t) for every live internal node, +inf elsewhere."""
    m = tree.node_count
    N = float(tree.n_samples[0])
    p = tree.n_positive.astype(float)
    n = tree.n_samples.astype(float)
    risk = 2.0 * p * (n - p) / (np.maximum(n, 1.0) * N)
    live_leaf = (tree.feature == LEAF) | collapsed
    leaves = np.where(live_leaf, 1, 0).astype(np.int64)
    sub = np.where(live_leaf, risk, 0.0)
    for i in range(m - 1, -1, -1):  # reverse preorder visits children before parents
        if not live_leaf[i]:
            leaves[i] = leaves[tree.left[i]] + leaves[tree.right[i]]
            sub[i] = sub[tree.left[i]] + sub[tree.right[i]]
    g = np.full(m, np.inf)
    internal = ~live_leaf
    g[internal] = (risk[internal] - sub[internal]) / (leaves[internal] - 1)
    # Nodes below a collapsed ancestor are dead.
    dead = np.zeros(m, bool)
    for i in range(m):
        if (collapsed[i] or dead[i]) and tree.feature[i] != LEAF:
            dead[tree.left[i]] = dead[tree.right[i]] = True
    g[dead] = np.inf
    return g


def ccp_path(tree: DecisionTree, train=None, test=None, *, zero_tol: float = 1e-14) -> PruningPath:
    """Weakest-link pruning sequence from the full tree down to the root leaf.

    ``train`` and ``test`` are labelled FeatureMatrix objects or ``(X, y)`` pairs.

    All nodes sharing the minimal effective alpha collapse together. Collapses
    with alpha at or below ``zero_tol`` leave training risk unchanged and are
    folded into the next recorded step, so the first step stays the unpruned
    tree and alphas stay strictly increasing.
    """
    steps = [PruningStep(0.0, tree, _accuracy(tree, train), _accuracy(tree, test))]
    collapsed = np.zeros(tree.node_count, bool)
    pending = False
    last_alpha = 0.0
    while tree.feature[0] != LEAF and not collapsed[0]:
        g = _effective_alphas(tree, collapsed)
        alpha = float(g.min())
        collapsed |= g <= alpha + 1e-10 * max(abs(alpha), zero_tol)
        if alpha <= zero_tol:
            pending = True
            continue
        alpha = max(alpha, np.nextafter(last_alpha, np.inf))
        pruned = collapse(tree, np.flatnonzero(collapsed))
        steps.append(PruningStep(alpha, pruned, _accuracy(pruned, train), _accuracy(pruned, test)))
        last_alpha, pending = alpha, False
    if pending:
        pruned = collapse(tree, np.flatnonzero(collapsed))
        alpha = float(np.nextafter(last_alpha, np.inf)) if last_alpha > 0 else zero_tol * 2
        steps.append(PruningStep(alpha, pruned, _accuracy(pruned, train), _accuracy(pruned, test)))
    return PruningPath(tuple(steps))
