"""Projection detector: squared reconstruction error outside the retained
principal subspace."""

from __future__ import annotations

import numpy as np

from .iforest import DegenerateData


class PCADetector:
    def __init__(self, variance_kept: float = 0.95):
        self.variance_kept = variance_kept
        self.mean: np.ndarray | None = None
        self.components: np.ndarray | None = None  # (m, p), rows orthonormal
        self.eigenvalues: np.ndarray | None = None  # all p, descending

    def fit(self, X: np.ndarray) -> "PCADetector":
        X = np.asarray(X, dtype=float)
        self.mean = X.mean(axis=0)
        centered = X - self.mean
        cov = centered.T @ centered / max(len(X) - 1, 1)
        scale = max(1.0, float(np.max(np.abs(X)))) ** 2
        if not np.any(np.abs(cov) > 1e-24 * scale):
            raise DegenerateData("covariance is all-zero")
        # eigh returns ascending; flip to descending
        vals, vecs = np.linalg.eigh(cov)
        vals = vals[::-1]
        vecs = vecs[:, ::-1]
        vals = np.clip(vals, 0.0, None)
        ratio = np.cumsum(vals) / vals.sum()
        m = int(np.searchsorted(ratio, self.variance_kept - 1e-12) + 1)
        self.eigenvalues = np.ascontiguousarray(vals)
        self.components = np.ascontiguousarray(vecs[:, :m].T)
        return self

    @property
    def n_components(self) -> int:
        return len(self.components)

    def score(self, X: np.ndarray) -> np.ndarray:
        """Squared residual norm after projection onto the kept subspace."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        centered = X - self.mean
        proj = centered @ self.components.T @ self.components
        resid = centered - proj
        return (resid * resid).sum(axis=1)

    def to_json(self) -> dict:
        return {
            "variance_kept": self.variance_kept,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }

    @staticmethod
    def from_json(d: dict) -> "PCADetector":
        model = PCADetector(d["variance_kept"])
        model.mean = np.array(d["mean"], dtype=float)
        model.components = np.array(d["components"], dtype=float)
        model.eigenvalues = np.array(d["eigenvalues"], dtype=float)
        return model
