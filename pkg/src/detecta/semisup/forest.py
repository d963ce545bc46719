"""Bagged decision-tree classifier: bootstrap per tree, Gini splits over a
random ceil(sqrt(p)) feature subset, depth-capped trees with class-histogram
leaves, deterministic under a fixed seed."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import SCHEMA_VERSION

MAX_THRESHOLD_CANDIDATES = 64


class SingleClassData(Exception):
    pass


class SchemaMismatch(Exception):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int = 12
    feature_rule: str = "sqrt"  # sqrt | log2 | all
    min_leaf: int = 1
    seed: int = 0

    def features_per_split(self, p: int) -> int:
        if self.feature_rule == "sqrt":
            return max(1, math.ceil(math.sqrt(p)))
        if self.feature_rule == "log2":
            return max(1, math.ceil(math.log2(p + 1)))
        if self.feature_rule == "all":
            return p
        raise ValueError(f"unknown feature_rule {self.feature_rule!r}")

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees, "max_depth": self.max_depth,
            "feature_rule": self.feature_rule, "min_leaf": self.min_leaf,
            "seed": self.seed,
        }

    @staticmethod
    def from_json(d: dict) -> "ForestParams":
        return ForestParams(**d)


class _TreeBuilder:
    def __init__(self, X, y_codes, n_classes, params: ForestParams, rng):
        self.X = X
        self.y = y_codes
        self.k = n_classes
        self.params = params
        self.rng = rng
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.hist: list[list[float]] = []

    def _add(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.hist.append([])
        return len(self.feature) - 1

    def build(self, idx: np.ndarray) -> int:
        return self._grow(idx, 0)

    def _leaf(self, node: int, idx: np.ndarray) -> int:
        counts = np.bincount(self.y[idx], minlength=self.k).astype(float)
        self.hist[node] = (counts / counts.sum()).tolist()
        return node

    def _grow(self, idx: np.ndarray, depth: int) -> int:
        node = self._add()
        y_node = self.y[idx]
        if (
            depth >= self.params.max_depth
            or len(idx) < 2 * self.params.min_leaf
            or (y_node == y_node[0]).all()
        ):
            return self._leaf(node, idx)
        n_feat = self.params.features_per_split(self.X.shape[1])
        feats = self.rng.choice(self.X.shape[1], size=n_feat, replace=False)
        best = self._best_split(idx, feats)
        if best is None:
            return self._leaf(node, idx)
        f, thr = best
        mask = self.X[idx, f] < thr
        left_idx = idx[mask]
        right_idx = idx[~mask]
        if len(left_idx) < self.params.min_leaf or len(right_idx) < self.params.min_leaf:
            return self._leaf(node, idx)
        self.feature[node] = int(f)
        self.threshold[node] = float(thr)
        self.left[node] = self._grow(left_idx, depth + 1)
        self.right[node] = self._grow(right_idx, depth + 1)
        return node

    def _best_split(self, idx: np.ndarray, feats: np.ndarray):
        y_node = self.y[idx]
        n = len(idx)
        onehot = np.zeros((n, self.k))
        onehot[np.arange(n), y_node] = 1.0
        best_score = np.inf
        best = None
        for f in feats:
            vals = self.X[idx, f]
            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            cum = np.cumsum(onehot[order], axis=0)
            bounds = np.flatnonzero(sv[:-1] < sv[1:])
            if bounds.size == 0:
                continue
            if bounds.size > MAX_THRESHOLD_CANDIDATES:
                pick = np.linspace(0, bounds.size - 1, MAX_THRESHOLD_CANDIDATES)
                bounds = bounds[np.round(pick).astype(int)]
            n_l = (bounds + 1).astype(float)
            n_r = n - n_l
            left = cum[bounds]
            right = cum[-1] - left
            gini_l = 1.0 - ((left / n_l[:, None]) ** 2).sum(axis=1)
            gini_r = 1.0 - ((right / n_r[:, None]) ** 2).sum(axis=1)
            weighted = (n_l * gini_l + n_r * gini_r) / n
            j = int(np.argmin(weighted))
            if weighted[j] < best_score - 1e-15:
                best_score = float(weighted[j])
                thr = (sv[bounds[j]] + sv[bounds[j] + 1]) / 2.0
                best = (int(f), float(thr))
        return best


@dataclass
class ForestModel:
    params: ForestParams
    classes: list[str]
    trees: list[dict]
    dataset_hash: str = ""
    metadata: dict | None = None

    @property
    def n_features(self) -> int:
        return self.metadata["n_features"] if self.metadata else -1

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.metadata and X.shape[1] != self.metadata["n_features"]:
            raise SchemaMismatch(
                f"expected {self.metadata['n_features']} features, got {X.shape[1]}"
            )
        total = np.zeros((len(X), len(self.classes)))
        for tree in self._arrays:
            feature, threshold, left, right, hist = tree
            node = np.zeros(len(X), dtype=np.intp)
            while True:
                internal = feature[node] >= 0
                if not internal.any():
                    break
                rows = np.flatnonzero(internal)
                cur = node[rows]
                goes_left = X[rows, feature[cur]] < threshold[cur]
                node[rows] = np.where(goes_left, left[cur], right[cur])
            total += hist[node]
        return total / len(self._arrays)

    def predict(self, X: np.ndarray) -> tuple[list[str], np.ndarray]:
        """Per-row (class, probability); ties pick the lowest class index."""
        proba = self.predict_proba(X)
        winners = np.argmax(proba, axis=1)
        return [self.classes[w] for w in winners], proba[np.arange(len(proba)), winners]

    def predict_one(self, x: np.ndarray) -> tuple[str, float]:
        cls, prob = self.predict(np.atleast_2d(x))
        return cls[0], float(prob[0])

    def __post_init__(self):
        self._freeze()

    def _freeze(self) -> None:
        self._arrays = [
            (
                np.array(t["feature"]), np.array(t["threshold"]),
                np.array(t["left"]), np.array(t["right"]),
                np.array([h if h else [0.0] * len(self.classes) for h in t["hist"]]),
            )
            for t in self.trees
        ]

    def to_json(self) -> dict:
        body = {
            "schema_version": SCHEMA_VERSION,
            "kind": "forest_model",
            "params": self.params.to_json(),
            "classes": self.classes,
            "trees": self.trees,
            "dataset_hash": self.dataset_hash,
            "metadata": self.metadata,
        }
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        body["content_hash"] = hashlib.sha256(blob).hexdigest()
        return body

    @staticmethod
    def from_json(d: dict) -> "ForestModel":
        return ForestModel(
            params=ForestParams.from_json(d["params"]),
            classes=list(d["classes"]),
            trees=list(d["trees"]),
            dataset_hash=d.get("dataset_hash", ""),
            metadata=d.get("metadata"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "ForestModel":
        return ForestModel.from_json(json.loads(Path(path).read_text()))


def train_forest(
    X: np.ndarray,
    y: list[str],
    params: ForestParams = ForestParams(),
    classes: list[str] | None = None,
    dataset_hash: str = "",
) -> ForestModel:
    X = np.asarray(X, dtype=float)
    if len(X) < 50:
        raise ValueError(f"need >= 50 rows to train, got {len(X)}")
    if classes is None:
        classes = sorted(set(y))
    if len(set(y)) < 2:
        raise SingleClassData("training data holds a single class")
    code = {c: i for i, c in enumerate(classes)}
    y_codes = np.array([code[v] for v in y], dtype=np.intp)

    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    trees = []
    for i in range(params.n_trees):
        rng = np.random.default_rng(seeds[i])
        boot = rng.integers(0, len(X), size=len(X))
        builder = _TreeBuilder(X, y_codes, len(classes), params, rng)
        builder.build(boot)
        trees.append(
            {
                "feature": builder.feature,
                "threshold": builder.threshold,
                "left": builder.left,
                "right": builder.right,
                "hist": builder.hist,
            }
        )
    return ForestModel(
        params=params,
        classes=list(classes),
        trees=trees,
        dataset_hash=dataset_hash,
        metadata={"n_features": int(X.shape[1]), "n_rows": int(len(X)), "seed": params.seed},
    )
