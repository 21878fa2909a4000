"""Isolation Forest baseline.

Each tree is grown on a random subsample of size ``psi`` by picking a random
feature and a uniform split value between that feature's min and max inside
the node, until a node holds at most one point or reaches the height limit
``ceil(log2(psi))``. Scores follow ``s(x) = 2 ** (-E[h(x)] / c(psi))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from drbfdd.errors import ShapeError


def harmonic(n: int) -> float:
    return math.fsum(1.0 / i for i in range(1, n + 1))


def average_path_length(n: int) -> float:
    """c(n): mean path length of an unsuccessful BST search among n points."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


@dataclass
class IsolationTree:
    # node arrays; feature == -1 marks a leaf
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray
    depth: np.ndarray

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] < self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        adjust = np.array([average_path_length(int(s)) for s in self.size])
        return self.depth[node] + adjust[node]


@dataclass
class IsolationForest:
    trees: list[IsolationTree]
    n_estimators: int
    subsample: int
    seed: int
    n_features: int

    @property
    def height_limit(self) -> int:
        return math.ceil(math.log2(self.subsample)) if self.subsample > 1 else 0


def _grow(X, rng, limit):
    feature, threshold, left, right, size, depth = [], [], [], [], [], []

    def new_node(n, d):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(n)
        depth.append(d)
        return len(feature) - 1

    stack = [(np.arange(X.shape[0]), 0, new_node(X.shape[0], 0))]
    while stack:
        rows, d, node = stack.pop()
        if rows.size <= 1 or d >= limit:
            continue
        sub = X[rows]
        lo, hi = sub.min(axis=0), sub.max(axis=0)
        splittable = np.nonzero(hi > lo)[0]
        if splittable.size == 0:
            continue  # duplicates: no split separates them
        q = int(splittable[rng.integers(splittable.size)])
        p = rng.uniform(lo[q], hi[q])
        if p <= lo[q]:  # uniform() may return the lower bound exactly
            p = np.nextafter(lo[q], hi[q])
        mask = sub[:, q] < p
        feature[node] = q
        threshold[node] = p
        li = new_node(int(mask.sum()), d + 1)
        ri = new_node(int((~mask).sum()), d + 1)
        left[node], right[node] = li, ri
        stack.append((rows[~mask], d + 1, ri))
        stack.append((rows[mask], d + 1, li))
    return IsolationTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(size, dtype=np.int64),
        np.array(depth, dtype=np.float64),
    )


def fit(data, n_estimators: int = 100, subsample: int = 256, seed: int = 0) -> IsolationForest:
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2:
        X = X.reshape(X.shape[0], -1)
    if X.shape[0] < 2:
        raise ValueError(f"isolation forest needs at least 2 points, got {X.shape[0]}")
    if n_estimators < 1:
        raise ValueError("n_estimators must be >= 1")
    psi = min(subsample, X.shape[0])
    limit = math.ceil(math.log2(psi))
    rng = np.random.default_rng(seed)
    trees = []
    for _ in range(n_estimators):
        rows = rng.choice(X.shape[0], size=psi, replace=False)
        trees.append(_grow(X[rows], rng, limit))
    return IsolationForest(trees, n_estimators, psi, seed, X.shape[1])


def score(forest: IsolationForest, x) -> np.ndarray | float:
    """Anomaly score in (0, 1); higher is more anomalous. Accepts one row or a batch."""
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = X.reshape(1, -1) if single else X.reshape(X.shape[0], -1)
    if X.shape[1] != forest.n_features:
        raise ShapeError(f"input has {X.shape[1]} features, forest expects {forest.n_features}")
    mean_h = np.mean([t.path_lengths(X) for t in forest.trees], axis=0)
    s = 2.0 ** (-mean_h / average_path_length(forest.subsample))
    return float(s[0]) if single else s


def forest_to_dict(forest: IsolationForest) -> dict:
    return {
        "n_estimators": forest.n_estimators,
        "subsample": forest.subsample,
        "seed": forest.seed,
        "n_features": forest.n_features,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [float(v).hex() for v in t.threshold],
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "size": t.size.tolist(),
                "depth": t.depth.astype(int).tolist(),
            }
            for t in forest.trees
        ],
    }


def forest_from_dict(d: dict) -> IsolationForest:
    trees = [
        IsolationTree(
            np.array(t["feature"], dtype=np.int64),
            np.array([float.fromhex(v) for v in t["threshold"]]),
            np.array(t["left"], dtype=np.int64),
            np.array(t["right"], dtype=np.int64),
            np.array(t["size"], dtype=np.int64),
            np.array(t["depth"], dtype=np.float64),
        )
        for t in d["trees"]
    ]
    return IsolationForest(trees, int(d["n_estimators"]), int(d["subsample"]), int(d["seed"]), int(d["n_features"]))
