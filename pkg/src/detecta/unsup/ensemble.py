"""Ensemble of the four detector families with quantile thresholds and
vote-based certainty.

Each detector is fitted on the same feature matrix; its flag threshold is
the (1 - contamination) quantile of its own training scores.  A sample's
votes are the number of flagging detectors, certainty is votes/4, and the
sample is anomalous when votes reach the vote threshold.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import SCHEMA_VERSION
from .iforest import IsolationForest
from .lof import LocalOutlierFactor
from .mcd import MinCovDet
from .pca import PCADetector

DETECTOR_NAMES = ("iforest", "lof", "pca", "mcd")


@dataclass(frozen=True)
class DetectorParams:
    n_trees: int = 100
    subsample: int = 256
    lof_k: int = 20
    variance_kept: float = 0.95
    mcd_h: int | None = None
    mcd_n_starts: int = 500
    contamination: float = 0.02
    vote_threshold: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.contamination < 0.5:
            raise ValueError("contamination must be in (0, 0.5)")
        if not 1 <= self.vote_threshold <= 4:
            raise ValueError("vote_threshold must be in 1..4")

    def to_json(self) -> dict:
        return {
            "n_trees": self.n_trees, "subsample": self.subsample,
            "lof_k": self.lof_k, "variance_kept": self.variance_kept,
            "mcd_h": self.mcd_h, "mcd_n_starts": self.mcd_n_starts,
            "contamination": self.contamination,
            "vote_threshold": self.vote_threshold, "seed": self.seed,
        }

    @staticmethod
    def from_json(d: dict) -> "DetectorParams":
        return DetectorParams(**d)


@dataclass
class UnsupVerdict:
    ts: int
    scores: dict[str, float]
    flags: dict[str, bool]
    votes: int
    certainty: float
    anomalous: bool

    def to_json(self) -> dict:
        return {
            "ts": self.ts,
            "scores": {k: self.scores[k] for k in DETECTOR_NAMES},
            "flags": {k: self.flags[k] for k in DETECTOR_NAMES},
            "votes": self.votes,
            "certainty": self.certainty,
            "anomalous": self.anomalous,
        }


class Ensemble:
    def __init__(self, params: DetectorParams):
        self.params = params
        self.iforest: IsolationForest | None = None
        self.lof: LocalOutlierFactor | None = None
        self.pca: PCADetector | None = None
        self.mcd: MinCovDet | None = None
        self.thresholds: dict[str, float] = {}
        self.training_flag_rate: dict[str, float] = {}

    def fit(self, X: np.ndarray) -> "Ensemble":
        X = np.asarray(X, dtype=float)
        p = self.params
        self.iforest = IsolationForest(p.n_trees, p.subsample, seed=p.seed).fit(X)
        self.lof = LocalOutlierFactor(p.lof_k).fit(X)
        self.pca = PCADetector(p.variance_kept).fit(X)
        self.mcd = MinCovDet(p.mcd_h, p.mcd_n_starts, seed=p.seed + 1).fit(X)
        q = 1.0 - p.contamination
        training = {
            "iforest": self.iforest.score(X),
            "lof": self.lof.training_scores,
            "pca": self.pca.score(X),
            "mcd": self.mcd.score(X),
        }
        self.thresholds = {
            name: float(np.quantile(scores, q)) for name, scores in training.items()
        }
        self.training_flag_rate = {
            name: float(np.mean(scores > self.thresholds[name]))
            for name, scores in training.items()
        }
        return self

    def score_all(self, X: np.ndarray) -> dict[str, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return {
            "iforest": self.iforest.score(X),
            "lof": self.lof.score(X),
            "pca": self.pca.score(X),
            "mcd": self.mcd.score(X),
        }

    def judge_all(self, X: np.ndarray, ts_list: list[int]) -> list[UnsupVerdict]:
        scores = self.score_all(X)
        flags = {
            name: scores[name] > self.thresholds[name] for name in DETECTOR_NAMES
        }
        votes = sum(flags[name].astype(int) for name in DETECTOR_NAMES)
        out = []
        for i, ts in enumerate(ts_list):
            v = int(votes[i])
            out.append(
                UnsupVerdict(
                    ts=ts,
                    scores={k: float(scores[k][i]) for k in DETECTOR_NAMES},
                    flags={k: bool(flags[k][i]) for k in DETECTOR_NAMES},
                    votes=v,
                    certainty=v / 4.0,
                    anomalous=v >= self.params.vote_threshold,
                )
            )
        return out

    def judge(self, x: np.ndarray, ts: int = 0) -> UnsupVerdict:
        return self.judge_all(np.atleast_2d(x), [ts])[0]

    # -- persistence ---------------------------------------------------------

    def to_json(self) -> dict:
        body = {
            "schema_version": SCHEMA_VERSION,
            "kind": "unsup_ensemble",
            "params": self.params.to_json(),
            "thresholds": self.thresholds,
            "iforest": self.iforest.to_json(),
            "lof": self.lof.to_json(),
            "pca": self.pca.to_json(),
            "mcd": self.mcd.to_json(),
        }
        body["content_hash"] = content_hash(body)
        return body

    @staticmethod
    def from_json(d: dict) -> "Ensemble":
        model = Ensemble(DetectorParams.from_json(d["params"]))
        model.thresholds = dict(d["thresholds"])
        model.iforest = IsolationForest.from_json(d["iforest"])
        model.lof = LocalOutlierFactor.from_json(d["lof"])
        model.pca = PCADetector.from_json(d["pca"])
        model.mcd = MinCovDet.from_json(d["mcd"])
        return model

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "Ensemble":
        return Ensemble.from_json(json.loads(Path(path).read_text()))


def fit_ensemble(X: np.ndarray, params: DetectorParams = DetectorParams()) -> Ensemble:
    return Ensemble(params).fit(X)


def content_hash(body: dict) -> str:
    blob = json.dumps(
        {k: v for k, v in body.items() if k != "content_hash"},
        sort_keys=True, separators=(",", ":"),
    ).encode()
    return hashlib.sha256(blob).hexdigest()