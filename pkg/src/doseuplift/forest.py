"""Regression random forest built on variance-reduction CART trees.

Determinism contract: per-tree RNG streams derive from (seed, tree index),
and training rows are canonically sorted before fitting, so predictions do
not depend on tree build order or on the row order of the training data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FOREST_FORMAT = "doseuplift-forest/1"


@dataclass(frozen=True)
class RfConfig:
    """Forest hyperparameters. ``max_depth=None`` means unlimited."""

    n_trees: int = 200
    max_depth: int | None = 15
    min_samples_leaf: int = 2
    feature_subsample: str | int = "sqrt"  # "sqrt", "all", or an explicit count
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if isinstance(self.feature_subsample, int) and self.feature_subsample < 1:
            raise ValueError("feature_subsample count must be >= 1")
        if self.feature_subsample not in ("sqrt", "all") and not isinstance(
            self.feature_subsample, int
        ):
            raise ValueError("feature_subsample must be 'sqrt', 'all', or an int")

    def n_split_features(self, n_features: int) -> int:
        if self.feature_subsample == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if self.feature_subsample == "all":
            return n_features
        return min(int(self.feature_subsample), n_features)


class _Tree:
    """Flat-array CART tree; feature == -1 marks a leaf."""

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=float)

    def predict(self, x_mat: np.ndarray) -> np.ndarray:
        nodes = np.zeros(x_mat.shape[0], dtype=np.int32)
        while True:
            feat = self.feature[nodes]
            active = feat >= 0
            if not np.any(active):
                return self.value[nodes]
            rows = np.nonzero(active)[0]
            go_left = x_mat[rows, feat[rows]] <= self.threshold[nodes[rows]]
            nodes[rows] = np.where(
                go_left, self.left[nodes[rows]], self.right[nodes[rows]]
            )


def _best_split(x_mat, y, idx, features, min_leaf):
    """Best (feature, threshold, gain) over candidate features, or None."""
    n = idx.size
    y_node = y[idx]
    total = y_node.sum()
    total_sq = (y_node * y_node).sum()
    sse_parent = total_sq - total * total / n

    best = None
    for f in features:
        v = x_mat[idx, f]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        ys = y_node[order]
        cy = np.cumsum(ys)
        cy2 = np.cumsum(ys * ys)
        # split after position p keeps [0..p] left and [p+1..] right
        p = np.arange(n - 1)
        valid = (vs[:-1] < vs[1:]) & (p + 1 >= min_leaf) & (n - p - 1 >= min_leaf)
        if not np.any(valid):
            continue
        p = p[valid]
        left_n = p + 1.0
        right_n = n - left_n
        sse_l = cy2[p] - cy[p] * cy[p] / left_n
        sse_r = (total_sq - cy2[p]) - (total - cy[p]) ** 2 / right_n
        gains = sse_parent - sse_l - sse_r
        k = int(np.argmax(gains))
        if gains[k] > 1e-12 and (best is None or gains[k] > best[2]):
            thr = 0.5 * (vs[p[k]] + vs[p[k] + 1])
            best = (f, thr, float(gains[k]))
    return best


def _build_tree(x_mat, y, cfg: RfConfig, rng: np.random.Generator) -> _Tree:
    n, n_features = x_mat.shape
    k_feat = cfg.n_split_features(n_features)
    if cfg.bootstrap:
        sample = rng.integers(0, n, size=n)
    else:
        sample = np.arange(n)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, sample, 0)]
    while stack:
        node, idx, depth = stack.pop()
        y_node = y[idx]
        value[node] = float(y_node.mean())
        if (
            (cfg.max_depth is not None and depth >= cfg.max_depth)
            or idx.size < 2 * cfg.min_samples_leaf
        ):
            continue
        cand = np.sort(rng.choice(n_features, size=k_feat, replace=False))
        split = _best_split(x_mat, y, idx, cand, cfg.min_samples_leaf)
        if split is None:
            continue
        f, thr, _ = split
        mask = x_mat[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node()
        right[node] = new_node()
        stack.append((right[node], idx[~mask], depth + 1))
        stack.append((left[node], idx[mask], depth + 1))
    return _Tree(feature, threshold, left, right, value)


def _canonical_order(x_mat: np.ndarray, y: np.ndarray) -> np.ndarray:
    keys = (y,) + tuple(x_mat[:, j] for j in range(x_mat.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


class RandomForestRegressor:
    """Bagged CART trees with midpoint thresholds and variance-reduction splits."""

    def __init__(self, config: RfConfig):
        self.config = config
        self.trees: list[_Tree] = []
        self.n_features = 0

    def fit(self, x_mat: np.ndarray, y: np.ndarray) -> "RandomForestRegressor":
        x_mat = np.asarray(x_mat, dtype=float)
        y = np.asarray(y, dtype=float)
        if x_mat.ndim != 2 or x_mat.shape[0] != y.shape[0]:
            raise ValueError("X must be 2-d with one target per row")
        if x_mat.shape[0] == 0:
            raise ValueError("cannot fit on an empty dataset")
        order = _canonical_order(x_mat, y)
        x_mat = np.ascontiguousarray(x_mat[order])
        y = y[order]
        self.n_features = x_mat.shape[1]
        self.trees = [
            _build_tree(x_mat, y, self.config, np.random.default_rng([self.config.seed, t]))
            for t in range(self.config.n_trees)
        ]
        return self

    def predict(self, x_mat: np.ndarray) -> np.ndarray:
        if not self.trees:
            raise ValueError("forest is not fitted")
        x_mat = np.asarray(x_mat, dtype=float)
        out = np.zeros(x_mat.shape[0])
        for tree in self.trees:
            out += tree.predict(x_mat)
        return out / len(self.trees)

    def to_json(self) -> str:
        cfg = self.config
        return json.dumps(
            {
                "format": FOREST_FORMAT,
                "config": {
                    "n_trees": cfg.n_trees,
                    "max_depth": cfg.max_depth,
                    "min_samples_leaf": cfg.min_samples_leaf,
                    "feature_subsample": cfg.feature_subsample,
                    "bootstrap": cfg.bootstrap,
                    "seed": cfg.seed,
                },
                "n_features": self.n_features,
                "trees": [
                    {
                        "feature": t.feature.tolist(),
                        "threshold": t.threshold.tolist(),
                        "left": t.left.tolist(),
                        "right": t.right.tolist(),
                        "value": t.value.tolist(),
                    }
                    for t in self.trees
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "RandomForestRegressor":
        obj = json.loads(text)
        if obj.get("format") != FOREST_FORMAT:
            raise ValueError("unrecognized forest file format")
        cfg = obj["config"]
        forest = cls(
            RfConfig(
                n_trees=cfg["n_trees"],
                max_depth=cfg["max_depth"],
                min_samples_leaf=cfg["min_samples_leaf"],
                feature_subsample=cfg["feature_subsample"],
                bootstrap=cfg["bootstrap"],
                seed=cfg["seed"],
            )
        )
        forest.n_features = obj["n_features"]
        forest.trees = [
            _Tree(t["feature"], t["threshold"], t["left"], t["right"], t["value"])
            for t in obj["trees"]
        ]
        return forest
