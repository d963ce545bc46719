"""Local Outlier Factor with exact neighbor computation.

Follows the standard definitions: k-distance, reachability distance,
local reachability density, LOF = mean(lrd(neighbors)) / lrd(x).  Neighbor
sets include all points within the k-distance (ties), duplicates fall out of
the reachability distance, and the all-duplicates corner (both densities
infinite) is defined as LOF = 1.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 2048


def _pairwise_dist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    a2 = (A * A).sum(axis=1)[:, None]
    b2 = (B * B).sum(axis=1)[None, :]
    d2 = a2 + b2 - 2.0 * A @ B.T
    np.maximum(d2, 0.0, out=d2)
    return np.sqrt(d2)


class LocalOutlierFactor:
    def __init__(self, k: int = 20):
        self.k = k
        self.X: np.ndarray | None = None
        self.k_dist: np.ndarray | None = None
        self.lrd: np.ndarray | None = None
        self.training_scores: np.ndarray | None = None

    def fit(self, X: np.ndarray) -> "LocalOutlierFactor":
        X = np.asarray(X, dtype=float)
        n = len(X)
        if n <= self.k:
            raise ValueError(f"need more than k={self.k} training points, got {n}")
        self.X = X
        D = _pairwise_dist(X, X)
        np.fill_diagonal(D, np.inf)  # leave-self-out for training quantities
        part = np.partition(D, self.k - 1, axis=1)
        self.k_dist = part[:, self.k - 1].copy()

        neighbors = [np.flatnonzero(D[i] <= self.k_dist[i]) for i in range(n)]
        lrd = np.empty(n)
        for i in range(n):
            nb = neighbors[i]
            reach = np.maximum(self.k_dist[nb], D[i, nb])
            m = reach.mean()
            lrd[i] = np.inf if m == 0.0 else 1.0 / m
        self.lrd = lrd

        scores = np.empty(n)
        for i in range(n):
            nb = neighbors[i]
            scores[i] = _ratio(lrd[nb], lrd[i])
        self.training_scores = scores
        return self

    def score(self, X: np.ndarray) -> np.ndarray:
        """LOF of query points w.r.t. the training set (queries not in set)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X))
        for lo in range(0, len(X), _CHUNK):
            block = X[lo:lo + _CHUNK]
            D = _pairwise_dist(block, self.X)
            kd = np.partition(D, self.k - 1, axis=1)[:, self.k - 1]
            for r in range(len(block)):
                nb = np.flatnonzero(D[r] <= kd[r])
                reach = np.maximum(self.k_dist[nb], D[r, nb])
                m = reach.mean()
                lrd_x = np.inf if m == 0.0 else 1.0 / m
                out[lo + r] = _ratio(self.lrd[nb], lrd_x)
        return out

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "X": self.X.tolist(),
            "k_dist": self.k_dist.tolist(),
            "lrd": [None if np.isinf(v) else v for v in self.lrd],
            "training_scores": [
                None if np.isinf(v) else v for v in self.training_scores
            ],
        }

    @staticmethod
    def from_json(d: dict) -> "LocalOutlierFactor":
        model = LocalOutlierFactor(d["k"])
        model.X = np.array(d["X"], dtype=float)
        model.k_dist = np.array(d["k_dist"], dtype=float)
        model.lrd = np.array([np.inf if v is None else v for v in d["lrd"]])
        model.training_scores = np.array(
            [np.inf if v is None else v for v in d["training_scores"]], dtype=float
        )
        return model


def _ratio(lrd_neighbors: np.ndarray, lrd_x: float) -> float:
    """mean(lrd of neighbors) / lrd(x) with the duplicate conventions."""
    if np.isinf(lrd_x):
        return 1.0 if np.isinf(lrd_neighbors).any() else 0.0
    return float(lrd_neighbors.mean() / lrd_x)
