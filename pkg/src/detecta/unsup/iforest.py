"""Isolation forest built on random subsamples.

Each tree splits on a uniformly random feature at a uniformly random cut
within the node's value range, capped at depth ceil(log2(subsample));
unexpanded nodes contribute the expected path length c(size) of an
unsuccessful BST search.  The anomaly score is 2**(-E[h(x)] / c(subsample)),
so scores live in (0, 1) and deeper average isolation means a lower score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateData(Exception):
    pass


def _harmonics(n: int) -> np.ndarray:
    """H[0..n] as exact cumulative float sums."""
    h = np.zeros(n + 1)
    if n >= 1:
        h[1:] = np.cumsum(1.0 / np.arange(1, n + 1))
    return h


_H_CACHE = _harmonics(4096)


def expected_path_length(n: int) -> float:
    """c(n): expected unsuccessful-search path length in a BST of n points."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    global _H_CACHE
    if n - 1 >= len(_H_CACHE):
        _H_CACHE = _harmonics(2 * n)
    return 2.0 * _H_CACHE[n - 1] - 2.0 * (n - 1) / n


@dataclass
class _Tree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    path_len: list[float] = field(default_factory=list)  # at leaves: depth + c(size)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.path_len.append(0.0)
        return len(self.feature) - 1


class IsolationForest:
    def __init__(self, n_trees: int = 100, subsample: int = 256, seed: int = 0):
        self.n_trees = n_trees
        self.subsample = subsample
        self.seed = seed
        self.trees: list[_Tree] = []
        self._c_norm = 0.0
        self._arrays: list[tuple] = []

    def fit(self, X: np.ndarray) -> "IsolationForest":
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        if np.all(X.max(axis=0) - X.min(axis=0) <= 0):
            raise DegenerateData("every feature is constant")
        psi = min(self.subsample, n)
        if n < psi:
            raise DegenerateData(f"need at least {psi} rows")
        rng = np.random.default_rng(self.seed)
        depth_cap = math.ceil(math.log2(max(psi, 2)))
        self._c_norm = expected_path_length(psi)
        self.trees = []
        for _ in range(self.n_trees):
            idx = rng.choice(n, size=psi, replace=False)
            tree = _Tree()
            self._grow(tree, X[idx], 0, depth_cap, rng)
            self.trees.append(tree)
        self._freeze()
        return self

    def _grow(self, tree: _Tree, data: np.ndarray, depth: int, cap: int, rng) -> int:
        node = tree.add_node()
        size = len(data)
        lo = data.min(axis=0)
        hi = data.max(axis=0)
        splittable = np.flatnonzero(hi > lo)
        if size <= 1 or depth >= cap or splittable.size == 0:
            tree.path_len[node] = depth + expected_path_length(size)
            return node
        f = int(rng.choice(splittable))
        cut = float(rng.uniform(lo[f], hi[f]))
        mask = data[:, f] < cut
        tree.feature[node] = f
        tree.threshold[node] = cut
        tree.left[node] = self._grow(tree, data[mask], depth + 1, cap, rng)
        tree.right[node] = self._grow(tree, data[~mask], depth + 1, cap, rng)
        return node

    def _freeze(self) -> None:
        self._arrays = [
            (
                np.array(t.feature), np.array(t.threshold),
                np.array(t.left), np.array(t.right), np.array(t.path_len),
            )
            for t in self.trees
        ]

    def score(self, X: np.ndarray) -> np.ndarray:
        """Anomaly scores in (0, 1); one pass per tree, vectorized over rows."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        total = np.zeros(len(X))
        for feature, threshold, left, right, path_len in self._arrays:
            node = np.zeros(len(X), dtype=np.intp)
            while True:
                internal = feature[node] >= 0
                if not internal.any():
                    break
                rows = np.flatnonzero(internal)
                cur = node[rows]
                goes_left = X[rows, feature[cur]] < threshold[cur]
                node[rows] = np.where(goes_left, left[cur], right[cur])
            total += path_len[node]
        mean_path = total / len(self._arrays)
        return np.power(2.0, -mean_path / self._c_norm)

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "subsample": self.subsample,
            "seed": self.seed,
            "c_norm": self._c_norm,
            "trees": [
                {
                    "feature": t.feature,
                    "threshold": t.threshold,
                    "left": t.left,
                    "right": t.right,
                    "path_len": t.path_len,
                }
                for t in self.trees
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "IsolationForest":
        model = IsolationForest(d["n_trees"], d["subsample"], d["seed"])
        model._c_norm = d["c_norm"]
        for td in d["trees"]:
            t = _Tree(
                feature=list(td["feature"]), threshold=list(td["threshold"]),
                left=list(td["left"]), right=list(td["right"]),
                path_len=list(td["path_len"]),
            )
            model.trees.append(t)
        model._freeze()
        return model
