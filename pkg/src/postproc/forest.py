"""Random forest of Gini decision trees over region features.

Each tree draws its own generator from ``SeedSequence(seed).spawn(n_trees)``,
so a forest is a pure function of (features, labels, params).
"""

import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from src.core.errors import ConfigError, ShapeError

DEFAULT_TREES = 50
DEFAULT_DEPTH = 8
DEFAULT_MIN_LEAF = 2


@dataclass
class ForestParams:
    n_trees: int = DEFAULT_TREES
    max_depth: int = DEFAULT_DEPTH
    min_leaf: int = DEFAULT_MIN_LEAF
    max_features: Optional[int] = None   # None -> ceil(sqrt(num features))
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 1:
            raise ConfigError(f"n_trees must be >= 1, got {self.n_trees}")
        if self.max_depth < 0:
            raise ConfigError(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ConfigError(f"min_leaf must be >= 1, got {self.min_leaf}")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError(f"max_features must be >= 1, got {self.max_features}")

    def features_per_split(self, num_features: int) -> int:
        if self.max_features is None:
            return math.ceil(math.sqrt(num_features))
        return min(self.max_features, num_features)


@dataclass
class Node:
    """Leaf when ``left`` is None; otherwise go left iff x[feature] <= threshold."""
    counts: tuple[int, int]
    feature: int = -1
    threshold: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    @property
    def label(self) -> int:
        # ties go to 0 (not missing)
        return int(self.counts[1] > self.counts[0])

    def to_dict(self) -> dict:
        if self.is_leaf:
            return {"counts": list(self.counts)}
        return {
            "counts": list(self.counts),
            "feature": self.feature,
            "threshold": self.threshold,
            "left": self.left.to_dict(),
            "right": self.right.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Node":
        counts = tuple(int(c) for c in data["counts"])
        if "left" not in data:
            return cls(counts=counts)
        return cls(
            counts=counts,
            feature=int(data["feature"]),
            threshold=float(data["threshold"]),
            left=cls.from_dict(data["left"]),
            right=cls.from_dict(data["right"]),
        )

    def leaves(self) -> list["Node"]:
        if self.is_leaf:
            return [self]
        return self.left.leaves() + self.right.leaves()

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(self.left.depth(), self.right.depth())


def gini(counts: np.ndarray) -> np.ndarray:
    """Gini impurity of class-count rows (..., 2)."""
    total = counts.sum(axis=-1)
    safe = np.where(total > 0, total, 1)
    p = counts / safe[..., None]
    return 1.0 - (p * p).sum(axis=-1)


def _best_split(x: np.ndarray, y: np.ndarray, feature_ids: np.ndarray, min_leaf: int):
    """Lowest weighted-Gini midpoint split over the given features.

    Returns (feature, threshold, score) or None when no split keeps both
    sides at ``min_leaf`` or more.
    """
    n = len(y)
    best = None
    for f in feature_ids:
        order = np.argsort(x[:, f], kind="stable")
        values = x[order, f]
        onehot = np.stack([y[order] == 0, y[order] == 1], axis=1).astype(np.int64)
        left = np.cumsum(onehot, axis=0)[:-1]          # split after position i
        right = onehot.sum(axis=0) - left
        n_left = np.arange(1, n)
        valid = (values[1:] > values[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not valid.any():
            continue
        score = (n_left * gini(left) + (n - n_left) * gini(right)) / n
        score = np.where(valid, score, np.inf)
        i = int(np.argmin(score))
        if best is None or score[i] < best[2]:
            best = (int(f), float((values[i] + values[i + 1]) / 2.0), float(score[i]))
    return best


def _grow(x, y, depth: int, params: ForestParams, rng: np.random.Generator) -> Node:
    counts = (int((y == 0).sum()), int((y == 1).sum()))
    node = Node(counts=counts)
    if depth >= params.max_depth or min(counts) == 0 or len(y) < 2 * params.min_leaf:
        return node

    k = params.features_per_split(x.shape[1])
    feature_ids = rng.choice(x.shape[1], size=k, replace=False)
    split = _best_split(x, y, feature_ids, params.min_leaf)
    if split is None or split[2] >= gini(np.array(counts, dtype=np.float64)):
        return node

    node.feature, node.threshold, _ = split
    go_left = x[:, node.feature] <= node.threshold
    node.left = _grow(x[go_left], y[go_left], depth + 1, params, rng)
    node.right = _grow(x[~go_left], y[~go_left], depth + 1, params, rng)
    return node


def tree_predict(tree: Node, x: np.ndarray) -> np.ndarray:
    """Leaf labels for every row of ``x``."""
    out = np.empty(len(x), dtype=np.int64)
    for i, row in enumerate(x):
        node = tree
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        out[i] = node.label
    return out


@dataclass
class RandomForest:
    params: ForestParams
    trees: list[Node] = field(default_factory=list)
    bootstraps: list[np.ndarray] = field(default_factory=list)
    oob_error: Optional[float] = None

    def tree_votes(self, x: np.ndarray) -> np.ndarray:
        """(n_trees, n) matrix of per-tree labels."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ShapeError(f"Expected an (n, features) matrix, got {x.shape}")
        return np.stack([tree_predict(t, x) for t in self.trees])

    def to_dict(self) -> dict:
        return {
            "params": {
                "n_trees": self.params.n_trees,
                "max_depth": self.params.max_depth,
                "min_leaf": self.params.min_leaf,
                "max_features": self.params.max_features,
                "seed": self.params.seed,
            },
            "oob_error": self.oob_error,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RandomForest":
        return cls(
            params=ForestParams(**data["params"]),
            trees=[Node.from_dict(t) for t in data["trees"]],
            oob_error=data.get("oob_error"),
        )


def _oob_error(trees: list[Node], bootstraps: list[np.ndarray], x: np.ndarray, y: np.ndarray) -> Optional[float]:
    n = len(y)
    positive = np.zeros(n)
    voters = np.zeros(n)
    for tree, sample in zip(trees, bootstraps):
        out_of_bag = np.ones(n, dtype=bool)
        out_of_bag[sample] = False
        if not out_of_bag.any():
            continue
        positive[out_of_bag] += tree_predict(tree, x[out_of_bag])
        voters[out_of_bag] += 1
    scored = voters > 0
    if not scored.any():
        return None
    predicted = (positive[scored] > voters[scored] / 2.0).astype(np.int64)
    return float((predicted != y[scored]).mean())


def forest_train(x: np.ndarray, y: np.ndarray, params: Optional[ForestParams] = None) -> RandomForest:
    """Fit a forest on an (n, 6) feature matrix and 0/1 labels.

    Single-class data still trains (every tree becomes a leaf predicting
    that class) but emits a warning.

    Raises:
        ShapeError: On mismatched or empty inputs
        ConfigError: On labels outside {0, 1} or bad params
    """
    params = params or ForestParams()
    params.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ShapeError(f"Features {x.shape} and labels {y.shape} disagree")
    if len(y) == 0:
        raise ShapeError("Cannot train a forest on zero samples")
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("Forest labels must be 0 or 1")
    if len(np.unique(y)) < 2:
        print(f"Warning: forest trained on a single class ({int(y[0])}); it will always predict it",
              file=sys.stderr)

    forest = RandomForest(params=params)
    n = len(y)
    for child in np.random.SeedSequence(params.seed).spawn(params.n_trees):
        rng = np.random.default_rng(child)
        sample = rng.integers(0, n, size=n)
        forest.trees.append(_grow(x[sample], y[sample], 0, params, rng))
        forest.bootstraps.append(sample)
    forest.oob_error = _oob_error(forest.trees, forest.bootstraps, x, y)
    return forest


def forest_predict(forest: RandomForest, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Majority label per row and the fraction of trees that voted for it.

    A split vote goes to 0.
    """
    votes = forest.tree_votes(x)
    positive = votes.mean(axis=0)
    labels = (positive > 0.5).astype(np.int64)
    fraction = np.where(labels == 1, positive, 1.0 - positive)
    return labels, fraction
