"""Budgeted random hyperparameter search with 5-fold cross-validated macro
F1 and a persisted trial log (wall-clock per trial doubles as the training
energy budget record)."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .forest import ForestModel, ForestParams, train_forest
from .metrics import evaluate_predictions

N_TREES_RANGE = (50, 300)
MAX_DEPTH_RANGE = (4, 20)
FEATURE_RULES = ("sqrt", "log2", "all")
N_FOLDS = 5


@dataclass
class Trial:
    number: int
    params: ForestParams
    cv_f1_macro: float
    wall_s: float

    def to_json(self) -> dict:
        return {
            "number": self.number,
            "params": self.params.to_json(),
            "cv_f1_macro": self.cv_f1_macro,
            "wall_s": self.wall_s,
        }


def cv_f1_macro(
    X: np.ndarray, y: list[str], params: ForestParams, classes: list[str]
) -> float:
    """Contiguous (time-ordered) 5-fold CV; folds with a single training
    class are skipped."""
    n = len(X)
    edges = np.linspace(0, n, N_FOLDS + 1).astype(int)
    scores = []
    for f in range(N_FOLDS):
        lo, hi = edges[f], edges[f + 1]
        test_idx = np.arange(lo, hi)
        train_idx = np.concatenate([np.arange(0, lo), np.arange(hi, n)])
        if len(test_idx) == 0 or len(set(y[i] for i in train_idx)) < 2:
            continue
        model = train_forest(
            X[train_idx], [y[i] for i in train_idx], params, classes=classes
        )
        pred, _ = model.predict(X[test_idx])
        truth = [y[i] for i in test_idx]
        scores.append(evaluate_predictions(truth, pred, classes).f1_macro)
    return float(np.mean(scores)) if scores else 0.0


def tune(
    X: np.ndarray,
    y: list[str],
    budget: int,
    seed: int = 0,
    classes: list[str] | None = None,
) -> tuple[ForestParams, ForestModel, list[Trial]]:
    """Random search over the forest space; returns the best parameters, a
    model retrained on all data with them, and the full trial log."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if classes is None:
        classes = sorted(set(y))
    rng = np.random.default_rng(seed)
    trials: list[Trial] = []
    best: Trial | None = None
    for t in range(budget):
        params = ForestParams(
            n_trees=int(rng.integers(N_TREES_RANGE[0], N_TREES_RANGE[1] + 1)),
            max_depth=int(rng.integers(MAX_DEPTH_RANGE[0], MAX_DEPTH_RANGE[1] + 1)),
            feature_rule=str(rng.choice(FEATURE_RULES)),
            seed=seed + t,
        )
        t0 = time.monotonic()
        score = cv_f1_macro(X, y, params, classes)
        trial = Trial(t, params, score, time.monotonic() - t0)
        trials.append(trial)
        if best is None or trial.cv_f1_macro > best.cv_f1_macro:
            best = trial
    model = train_forest(X, y, best.params, classes=classes)
    return best.params, model, trials
