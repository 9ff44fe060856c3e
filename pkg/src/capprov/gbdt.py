"""Least-squares gradient boosting with leaf-wise regression trees."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Hyperparams:
    max_depth: int = 6
    num_leaves: int = 31
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValidationError(f"max_depth must be >= 1, got {self.max_depth}")
        if self.num_leaves < 2:
            raise ValidationError(f"num_leaves must be >= 2, got {self.num_leaves}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValidationError(f"learning_rate must be in (0, 1], got {self.learning_rate}")

    def key(self) -> tuple:
        return (self.max_depth, self.num_leaves, self.learning_rate)

    def to_dict(self) -> dict:
        return {"max_depth": self.max_depth, "num_leaves": self.num_leaves, "learning_rate": self.learning_rate}


class RegressionTree:
    """Binary tree stored as parallel arrays; node 0 is the root.

    Internal nodes send ``x[feature] <= threshold`` left. Leaves have
    ``feature == -1`` and carry ``value``.
    """

    def __init__(self, feature, threshold, left, right, value, depth):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        self.depth = np.asarray(depth, dtype=np.int64)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def leaf_values(self) -> np.ndarray:
        return self.value[self.feature < 0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            internal = feat >= 0
            if not internal.any():
                return self.value[node]
            idx = rows[internal]
            go_left = X[idx, feat[internal]] <= self.threshold[node[internal]]
            node[idx] = np.where(go_left, self.left[node[internal]], self.right[node[internal]])

    def to_dict(self, i: int = 0) -> dict:
        if self.feature[i] < 0:
            return {"leaf": float(self.value[i])}
        return {
            "feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        feature, threshold, left, right, value, depth = [], [], [], [], [], []

        def visit(node: dict, d: int) -> int:
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            depth.append(d)
            if "leaf" in node:
                value[i] = float(node["leaf"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                left[i] = visit(node["left"], d + 1)
                right[i] = visit(node["right"], d + 1)
            return i

        visit(doc, 0)
        return cls(feature, threshold, left, right, value, depth)


@dataclass
class _Leaf:
    rows: np.ndarray  # boolean mask over training rows
    depth: int
    node: int
    gain: float = -math.inf
    feature: int = -1
    threshold: float = 0.0


def _best_split(mask, orders, X, resid, min_samples_leaf):
    """Exhaustive search over distinct feature values; returns (gain, feature, threshold)."""
    best = (-math.inf, -1, 0.0)
    for f, order in enumerate(orders):
        idx = order[mask[order]]
        n = idx.size
        if n < 2 * min_samples_leaf:
            return best
        xs = X[idx, f]
        cs = np.cumsum(resid[idx])
        total = cs[-1]
        k = np.arange(min_samples_leaf - 1, n - min_samples_leaf)
        k = k[xs[k] < xs[k + 1]]
        if k.size == 0:
            continue
        n_left = k + 1.0
        s_left = cs[k]
        gain = s_left**2 / n_left + (total - s_left) ** 2 / (n - n_left) - total**2 / n
        j = int(np.argmax(gain))
        if gain[j] > best[0]:
            a, b = xs[k[j]], xs[k[j] + 1]
            thr = a + (b - a) / 2.0
            if not a <= thr < b:
                thr = a
            best = (float(gain[j]), f, float(thr))
    return best


def grow_tree(
    X: np.ndarray,
    resid: np.ndarray,
    orders: list[np.ndarray],
    hp: Hyperparams,
    min_samples_leaf: int = 1,
    rows: np.ndarray | None = None,
) -> RegressionTree:
    """Grow one tree leaf-wise: always split the leaf with the largest loss reduction."""
    n = X.shape[0]
    mask = np.ones(n, dtype=bool) if rows is None else rows
    sq = float(resid[mask] @ resid[mask])
    min_gain = 1e-12 * sq

    feature, threshold, left, right, value, depth = [-1], [0.0], [-1], [-1], [0.0], [0]
    value[0] = float(resid[mask].mean())
    heap: list[tuple] = []
    counter = 0

    def consider(leaf: _Leaf):
        nonlocal counter
        if leaf.depth >= hp.max_depth:
            return
        gain, f, thr = _best_split(leaf.rows, orders, X, resid, min_samples_leaf)
        if f < 0 or gain <= min_gain:
            return
        leaf.gain, leaf.feature, leaf.threshold = gain, f, thr
        # max-heap on gain; creation order breaks ties
        heapq.heappush(heap, (-gain, counter, leaf))
        counter += 1

    consider(_Leaf(mask, 0, 0))
    n_leaves = 1
    while heap and n_leaves < hp.num_leaves:
        _, _, leaf = heapq.heappop(heap)
        go_left = X[:, leaf.feature] <= leaf.threshold
        children = []
        for side in (leaf.rows & go_left, leaf.rows & ~go_left):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(float(resid[side].mean()))
            depth.append(leaf.depth + 1)
            children.append(_Leaf(side, leaf.depth + 1, len(feature) - 1))
        i = leaf.node
        feature[i], threshold[i] = leaf.feature, leaf.threshold
        left[i], right[i] = children[0].node, children[1].node
        n_leaves += 1
        for child in children:
            consider(child)
    return RegressionTree(feature, threshold, left, right, value, depth)


@dataclass
class BoostedEnsemble:
    """Fitted ensemble: ``base + learning_rate * sum(tree outputs)``."""

    trees: list[RegressionTree]
    base_prediction: float
    hyperparams: Hyperparams
    train_rmse: list[float] = field(default_factory=list)

    @property
    def learning_rate(self) -> float:
        return self.hyperparams.learning_rate

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += tree.predict(X)
        return self.base_prediction + self.learning_rate * out


def boost(
    X: np.ndarray,
    y: np.ndarray,
    hp: Hyperparams,
    n_trees: int,
    seed: int = 0,
    *,
    min_samples_leaf: int = 1,
    subsample: float = 1.0,
) -> BoostedEnsemble:
    """Fit ``n_trees`` trees, each to the residuals of the ensemble so far.

    ``train_rmse[k]`` is the training RMSE after ``k`` trees (index 0 is the
    constant base model). With ``subsample < 1`` each tree sees a seeded
    random subset of rows.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("training matrix must be 2-D and nonempty")
    if y.shape != (X.shape[0],):
        raise ValidationError("targets must match the number of rows")
    if n_trees < 1:
        raise ValidationError(f"n_trees must be >= 1, got {n_trees}")
    if not 0.0 < subsample <= 1.0:
        raise ValidationError(f"subsample must be in (0, 1], got {subsample}")
    orders = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    rng = np.random.default_rng(seed)
    base = math.fsum(y.tolist()) / y.size
    pred = np.full(y.size, base)
    rmse = [float(np.sqrt(np.mean((y - pred) ** 2)))]
    trees = []
    for _ in range(n_trees):
        resid = y - pred
        rows = None
        if subsample < 1.0:
            rows = np.zeros(y.size, dtype=bool)
            rows[rng.choice(y.size, max(1, int(round(subsample * y.size))), replace=False)] = True
        tree = grow_tree(X, resid, orders, hp, min_samples_leaf, rows)
        trees.append(tree)
        pred = pred + hp.learning_rate * tree.predict(X)
        rmse.append(float(np.sqrt(np.mean((y - pred) ** 2))))
    return BoostedEnsemble(trees, base, hp, rmse)
