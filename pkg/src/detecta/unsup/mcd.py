"""Minimum Covariance Determinant via the FAST-MCD concentration algorithm.

Random (p+1)-element starts are concentrated (take the h points with the
smallest Mahalanobis distance, refit mean and covariance) until the
determinant stops decreasing; the best determinant over all starts wins.
The reported covariance is rescaled by the consistency factor
median(d^2)/chi2_ppf(0.5, p) so distances of Gaussian data are chi2-scaled.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import chi2


class SingularCovariance(Exception):
    pass


def _logdet(cov: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(cov)
    return val if sign > 0 else np.inf


def _ridge(cov: np.ndarray) -> np.ndarray:
    p = len(cov)
    return cov + np.eye(p) * (1e-8 * np.trace(cov) / p + 1e-12)


def _mahalanobis_sq(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    try:
        inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        inv = np.linalg.inv(_ridge(cov))
    centered = X - mean
    return np.einsum("ij,jk,ik->i", centered, inv, centered)


class MinCovDet:
    def __init__(self, h: int | None = None, n_starts: int = 500, seed: int = 0):
        self.h = h
        self.n_starts = n_starts
        self.seed = seed
        self.mean: np.ndarray | None = None
        self.cov: np.ndarray | None = None          # consistency-rescaled
        self.raw_cov: np.ndarray | None = None
        self.support: np.ndarray | None = None
        self.best_logdet: float = np.inf
        self.ridged: bool = False

    def fit(self, X: np.ndarray) -> "MinCovDet":
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        if n <= 2 * p:
            raise ValueError(f"need n > 2p for a stable fit (n={n}, p={p})")
        h = self.h if self.h is not None else (n + p + 1) // 2
        if not p < h <= n:
            raise ValueError(f"h must be in (p, n], got {h}")
        rng = np.random.default_rng(self.seed)

        best_logdet = np.inf
        best_support: np.ndarray | None = None
        for _ in range(self.n_starts):
            support = self._concentrate(X, rng.choice(n, size=p + 1, replace=False), h)
            cov = np.cov(X[support], rowvar=False, bias=False)
            ld = _logdet(cov)
            if ld == np.inf:
                # singular h-subset (e.g. exact one-hot dependence): compare
                # on the ridged determinant so selection still works
                ld = _logdet(_ridge(cov))
            if ld < best_logdet or best_support is None:
                best_logdet = ld
                best_support = support

        if best_support is None:
            raise SingularCovariance("no h-subset found")
        self.support = np.sort(best_support)
        self.mean = X[self.support].mean(axis=0)
        raw = np.cov(X[self.support], rowvar=False, bias=False)
        if _logdet(raw) == np.inf:
            raw = _ridge(raw)
            self.ridged = True
        self.raw_cov = raw
        self.best_logdet = _logdet(raw)

        d2 = _mahalanobis_sq(X, self.mean, self.raw_cov)
        factor = float(np.median(d2)) / float(chi2.ppf(0.5, p))
        self.cov = self.raw_cov * max(factor, 1e-300)
        return self

    def _concentrate(self, X: np.ndarray, start_idx: np.ndarray, h: int) -> np.ndarray:
        mean = X[start_idx].mean(axis=0)
        cov = np.cov(X[start_idx], rowvar=False, bias=False)
        if _logdet(cov) == np.inf:
            cov = _ridge(cov)
        prev_ld = np.inf
        support = start_idx
        for _ in range(100):
            d2 = _mahalanobis_sq(X, mean, cov)
            support = np.argpartition(d2, h - 1)[:h]
            mean = X[support].mean(axis=0)
            cov = np.cov(X[support], rowvar=False, bias=False)
            ld = _logdet(cov)
            if ld == np.inf:
                cov = _ridge(cov)
                ld = _logdet(cov)
            if ld >= prev_ld - 1e-12:
                break
            prev_ld = ld
        return support

    def score(self, X: np.ndarray) -> np.ndarray:
        """Robust squared Mahalanobis distance."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _mahalanobis_sq(X, self.mean, self.cov)

    def to_json(self) -> dict:
        return {
            "h": self.h,
            "n_starts": self.n_starts,
            "seed": self.seed,
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "raw_cov": self.raw_cov.tolist(),
            "support": self.support.tolist(),
            "best_logdet": self.best_logdet,
            "ridged": self.ridged,
        }

    @staticmethod
    def from_json(d: dict) -> "MinCovDet":
        model = MinCovDet(d["h"], d["n_starts"], d["seed"])
        model.mean = np.array(d["mean"], dtype=float)
        model.cov = np.array(d["cov"], dtype=float)
        model.raw_cov = np.array(d["raw_cov"], dtype=float)
        model.support = np.array(d["support"], dtype=int)
        model.best_logdet = d["best_logdet"]
        model.ridged = d["ridged"]
        return model
