"""Labeled datasets: rule propagation over ensemble verdicts, human-label
merge with last-write-wins auditing, and content-hash versioning."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import SCHEMA_VERSION
from ..features import FeatureRow
from ..taxonomy import AnomalyClass
from ..unsup import UnsupVerdict
from .rules import LabelRule, classify_flagged

PROVENANCE_RULE = "rule"
PROVENANCE_HUMAN = "human"
PROVENANCE_TRUTH = "ground-truth"

CLASS_ORDER = [c.value for c in AnomalyClass]


class AlignmentError(Exception):
    pass


class UnknownTimestamp(Exception):
    pass


@dataclass(frozen=True)
class EventSpan:
    start_ts: int
    end_ts: int
    anomaly_class: AnomalyClass
    samples: int

    def to_json(self) -> dict:
        return {
            "start_ts": self.start_ts,
            "end_ts": self.end_ts,
            "anomaly_class": self.anomaly_class.value,
            "samples": self.samples,
        }


@dataclass
class LabeledDataset:
    ts: list[int]
    X: np.ndarray
    labels: list[AnomalyClass]
    provenance: list[str]
    events: list[EventSpan] = field(default_factory=list)
    audit: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def classes(self) -> list[str]:
        present = {lbl.value for lbl in self.labels}
        return [c for c in CLASS_ORDER if c in present]

    @property
    def version_hash(self) -> str:
        blob = json.dumps(
            {
                "ts": self.ts,
                "labels": [lbl.value for lbl in self.labels],
                "provenance": self.provenance,
                "X": hashlib.sha256(np.ascontiguousarray(self.X).tobytes()).hexdigest(),
            },
            sort_keys=True, separators=(",", ":"),
        ).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "labeled_dataset",
            "ts": self.ts,
            "X": self.X.tolist(),
            "labels": [lbl.value for lbl in self.labels],
            "provenance": self.provenance,
            "events": [e.to_json() for e in self.events],
            "audit": self.audit,
            "version_hash": self.version_hash,
        }

    @staticmethod
    def from_json(d: dict) -> "LabeledDataset":
        return LabeledDataset(
            ts=list(d["ts"]),
            X=np.array(d["X"], dtype=float),
            labels=[AnomalyClass(v) for v in d["labels"]],
            provenance=list(d["provenance"]),
            events=[
                EventSpan(e["start_ts"], e["end_ts"], AnomalyClass(e["anomaly_class"]), e["samples"])
                for e in d["events"]
            ],
            audit=list(d["audit"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "LabeledDataset":
        return LabeledDataset.from_json(json.loads(Path(path).read_text()))


def propagate(
    verdicts: list[UnsupVerdict],
    rows: list[FeatureRow],
    rules: list[LabelRule],
    X: np.ndarray | None = None,
    transform=None,
) -> LabeledDataset:
    """Assign classes: flagged samples get the first matching rule's class
    (else Novelty); unflagged samples are Normal.  Contiguous same-class
    anomaly runs are merged into event spans."""
    if len(verdicts) != len(rows):
        raise AlignmentError(f"{len(verdicts)} verdicts vs {len(rows)} rows")
    for v, r in zip(verdicts, rows):
        if v.ts != r.ts:
            raise AlignmentError(f"verdict ts {v.ts} != row ts {r.ts}")
    if X is None:
        if transform is None:
            raise ValueError("need X or a transform to vectorize rows")
        X = np.array([transform(r.raw) for r in rows])

    labels: list[AnomalyClass] = []
    for v, r in zip(verdicts, rows):
        if v.anomalous:
            labels.append(classify_flagged(r.raw, rules))
        else:
            labels.append(AnomalyClass.NORMAL)

    events = merge_events([r.ts for r in rows], labels)
    return LabeledDataset(
        ts=[r.ts for r in rows],
        X=np.asarray(X, dtype=float),
        labels=labels,
        provenance=[PROVENANCE_RULE] * len(rows),
        events=events,
    )


def merge_events(ts: list[int], labels: list[AnomalyClass]) -> list[EventSpan]:
    events: list[EventSpan] = []
    run_class: AnomalyClass | None = None
    run_start = run_end = 0
    run_n = 0
    for t, lbl in zip(ts, labels):
        if lbl == run_class:
            run_end = t
            run_n += 1
            continue
        if run_class is not None and run_class != AnomalyClass.NORMAL:
            events.append(EventSpan(run_start, run_end, run_class, run_n))
        run_class, run_start, run_end, run_n = lbl, t, t, 1
    if run_class is not None and run_class != AnomalyClass.NORMAL:
        events.append(EventSpan(run_start, run_end, run_class, run_n))
    return events


def merge_human(dataset: LabeledDataset, expert_labels: list[dict]) -> LabeledDataset:
    """Apply expert labels (``{"ts", "anomaly_class", "actor"}``); the expert
    always wins, duplicate entries for one ts are last-write-wins, and every
    application is recorded in the audit trail."""
    index = {t: i for i, t in enumerate(dataset.ts)}
    labels = list(dataset.labels)
    provenance = list(dataset.provenance)
    audit = list(dataset.audit)
    for entry in expert_labels:
        t = entry["ts"]
        if t not in index:
            raise UnknownTimestamp(f"no dataset row at ts {t}")
        i = index[t]
        new_class = AnomalyClass(entry["anomaly_class"])
        audit.append(
            {
                "ts": t,
                "from": labels[i].value,
                "to": new_class.value,
                "actor": entry.get("actor", "expert"),
                "overwrote_human": provenance[i] == PROVENANCE_HUMAN,
            }
        )
        labels[i] = new_class
        provenance[i] = PROVENANCE_HUMAN
    return LabeledDataset(
        ts=list(dataset.ts),
        X=dataset.X,
        labels=labels,
        provenance=provenance,
        events=merge_events(dataset.ts, labels),
        audit=audit,
    )
