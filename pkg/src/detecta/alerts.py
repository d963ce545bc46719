"""Decision support: fuse unsupervised certainty with classifier output,
deduplicate fused events into alerts, rank cause hypotheses, and manage the
alert lifecycle with an append-only audit trail."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .taxonomy import CAUSE_COLUMNS, AnomalyClass
from .unsup import UnsupVerdict

STATUS_NEW = "New"
STATUS_ACKNOWLEDGED = "Acknowledged"
STATUS_VALIDATED = "Validated"
STATUS_DISMISSED = "Dismissed"

LEGAL_TRANSITIONS = {
    ("New", "ack"): STATUS_ACKNOWLEDGED,
    ("Acknowledged", "validate"): STATUS_VALIDATED,
    ("Acknowledged", "dismiss"): STATUS_DISMISSED,
}


class AlertError(Exception):
    pass


class IllegalTransition(AlertError):
    pass


class MissingRow(AlertError):
    pass


class UnknownAlert(AlertError):
    pass


@dataclass(frozen=True)
class AlertPolicy:
    min_certainty: float = 0.5
    cooldown_s: float = 120.0
    merge_gap_s: float = 60.0

    def to_json(self) -> dict:
        return {
            "min_certainty": self.min_certainty,
            "cooldown_s": self.cooldown_s,
            "merge_gap_s": self.merge_gap_s,
        }

    @staticmethod
    def from_json(d: dict) -> "AlertPolicy":
        return AlertPolicy(**d)


DEFAULT_CAUSE_WEIGHTS: dict[str, dict[str, float]] = {
    # weights are plausibility, not probabilities; rows need not sum to 1
    "HighConstUtil": {"Mechanical": 0.6, "Human": 0.25, "Cyber": 0.15},
    "HighUtilHighZ": {"Mechanical": 0.55, "Human": 0.3, "Cyber": 0.15},
    "MultiAxisHighSpeed": {"Cyber": 0.45, "Mechanical": 0.35, "Human": 0.2},
    "ProlongedOff": {"Human": 0.6, "Mechanical": 0.3, "Cyber": 0.1},
    "ParamFluctuation": {"Cyber": 0.8, "Human": 0.15, "Mechanical": 0.05},
    "Novelty": {"Cyber": 0.4, "Mechanical": 0.35, "Human": 0.25},
}


@dataclass(frozen=True)
class CauseMatrix:
    weights: dict[str, dict[str, float]]

    def __post_init__(self):
        for cls in AnomalyClass:
            if cls == AnomalyClass.NORMAL:
                continue
            if cls.value not in self.weights:
                raise MissingRow(f"cause matrix misses a row for {cls.value}")
            row = self.weights[cls.value]
            for col in CAUSE_COLUMNS:
                w = row.get(col)
                if w is None or not (0.0 <= w <= 1.0):
                    raise AlertError(f"bad weight for {cls.value}/{col}: {w!r}")

    def rank(self, anomaly_class: AnomalyClass) -> list[tuple[str, float]]:
        """Causes sorted by weight descending; ties keep column order."""
        if anomaly_class.value not in self.weights:
            raise MissingRow(f"no cause row for {anomaly_class.value}")
        row = self.weights[anomaly_class.value]
        order = {c: i for i, c in enumerate(CAUSE_COLUMNS)}
        return sorted(
            ((c, row[c]) for c in CAUSE_COLUMNS),
            key=lambda cw: (-cw[1], order[cw[0]]),
        )

    def to_json(self) -> dict:
        return {k: dict(v) for k, v in self.weights.items()}

    @staticmethod
    def from_json(d: dict) -> "CauseMatrix":
        return CauseMatrix({k: dict(v) for k, v in d.items()})


def default_cause_matrix() -> CauseMatrix:
    return CauseMatrix({k: dict(v) for k, v in DEFAULT_CAUSE_WEIGHTS.items()})


@dataclass(frozen=True)
class FusedEvent:
    ts: int
    anomaly_class: AnomalyClass
    certainty: float
    votes: int
    classifier_class: AnomalyClass
    classifier_prob: float

    def to_json(self) -> dict:
        return {
            "ts": self.ts,
            "anomaly_class": self.anomaly_class.value,
            "certainty": self.certainty,
            "votes": self.votes,
            "classifier_class": self.classifier_class.value,
            "classifier_prob": self.classifier_prob,
        }


def fuse(
    verdict: UnsupVerdict,
    prediction: tuple[str, float],
    vote_threshold: int = 2,
) -> FusedEvent:
    """certainty = (votes/4 + classifier probability) / 2.

    The class is the classifier's, except that a Normal call against
    vote_threshold or more detector votes becomes Novelty (the ensemble sees
    what the classifier has not learned); its certainty then uses the
    complement of the Normal probability.
    """
    cls = AnomalyClass(prediction[0])
    prob = float(prediction[1])
    if cls == AnomalyClass.NORMAL and verdict.votes >= vote_threshold:
        cls = AnomalyClass.NOVELTY
        prob = 1.0 - prob
    certainty = 0.5 * (verdict.votes / 4.0) + 0.5 * prob
    return FusedEvent(
        ts=verdict.ts,
        anomaly_class=cls,
        certainty=certainty,
        votes=verdict.votes,
        classifier_class=AnomalyClass(prediction[0]),
        classifier_prob=float(prediction[1]),
    )


@dataclass
class Alert:
    id: int
    first_ts: int
    last_ts: int
    anomaly_class: AnomalyClass
    certainty: float
    corroborating_models: int
    classifier_prob: float
    causes: list[tuple[str, float]]
    status: str = STATUS_NEW
    events: int = 1
    suppressed_events: int = 0
    expert_relabel: AnomalyClass | None = None
    notes: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "first_ts": self.first_ts,
            "last_ts": self.last_ts,
            "anomaly_class": self.anomaly_class.value,
            "certainty": self.certainty,
            "corroborating_models": self.corroborating_models,
            "classifier_prob": self.classifier_prob,
            "causes": [[c, w] for c, w in self.causes],
            "status": self.status,
            "events": self.events,
            "suppressed_events": self.suppressed_events,
            "expert_relabel": self.expert_relabel.value if self.expert_relabel else None,
        }


class AlertEngine:
    """Single-writer alert state machine over an ordered fused-event stream.

    Every mutation is emitted as an audit record; replaying the audit stream
    rebuilds the exact same alert states.
    """

    def __init__(
        self,
        policy: AlertPolicy = AlertPolicy(),
        cause_matrix: CauseMatrix | None = None,
    ):
        self.policy = policy
        self.cause_matrix = cause_matrix or default_cause_matrix()
        self.alerts: dict[int, Alert] = {}
        self._next_id = 1
        self._open_by_class: dict[AnomalyClass, int] = {}
        self._last_dismiss_ts: dict[AnomalyClass, int] = {}
        self.audit: list[dict] = []

    # -- event intake ---------------------------------------------------------

    def process(self, event: FusedEvent) -> Alert | None:
        """Feed one fused event; returns the created or extended alert."""
        if event.anomaly_class == AnomalyClass.NORMAL:
            return None
        if event.certainty < self.policy.min_certainty:
            return None

        open_id = self._open_by_class.get(event.anomaly_class)
        if open_id is not None:
            alert = self.alerts[open_id]
            gap_s = (event.ts - alert.last_ts) / 1000.0
            if gap_s <= self.policy.merge_gap_s and alert.status in (
                STATUS_NEW, STATUS_ACKNOWLEDGED,
            ):
                alert.last_ts = event.ts
                alert.events += 1
                if event.certainty > alert.certainty:
                    alert.certainty = event.certainty
                    alert.classifier_prob = event.classifier_prob
                alert.corroborating_models = max(alert.corroborating_models, event.votes)
                self._audit("extended", alert.id, event.ts, detail=event.to_json())
                return alert
            self._open_by_class.pop(event.anomaly_class, None)

        dismissed_at = self._last_dismiss_ts.get(event.anomaly_class)
        if (
            dismissed_at is not None
            and (event.ts - dismissed_at) / 1000.0 <= self.policy.cooldown_s
        ):
            # attach to the dismissed alert's audit; no new alert in cooldown
            victim = self._find_latest_dismissed(event.anomaly_class)
            if victim is not None:
                victim.suppressed_events += 1
            self._audit(
                "suppressed", victim.id if victim else -1, event.ts,
                detail=event.to_json(),
            )
            return None

        alert = Alert(
            id=self._next_id,
            first_ts=event.ts,
            last_ts=event.ts,
            anomaly_class=event.anomaly_class,
            certainty=event.certainty,
            corroborating_models=event.votes,
            classifier_prob=event.classifier_prob,
            causes=self.cause_matrix.rank(event.anomaly_class),
        )
        self._next_id += 1
        self.alerts[alert.id] = alert
        self._open_by_class[event.anomaly_class] = alert.id
        self._audit("created", alert.id, event.ts, detail=event.to_json())
        return alert

    def _find_latest_dismissed(self, cls: AnomalyClass) -> Alert | None:
        best = None
        for alert in self.alerts.values():
            if alert.anomaly_class == cls and alert.status == STATUS_DISMISSED:
                if best is None or alert.last_ts > best.last_ts:
                    best = alert
        return best

    # -- lifecycle --------------------------------------------------------------

    def transition(
        self,
        alert_id: int,
        action: str,
        actor: str,
        ts: int,
        relabel_class: AnomalyClass | str | None = None,
    ) -> tuple[Alert, dict | None]:
        """ack | validate | dismiss | relabel; returns the updated alert and,
        for relabel, the expert-label record to feed the dataset merge."""
        alert = self.alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(f"no alert {alert_id}")
        if action == "relabel":
            if alert.status not in (STATUS_NEW, STATUS_ACKNOWLEDGED):
                raise IllegalTransition(f"cannot relabel a {alert.status} alert")
            if relabel_class is None:
                raise AlertError("relabel needs a class")
            new_class = AnomalyClass(relabel_class)
            alert.expert_relabel = new_class
            self._audit("relabel", alert.id, ts, actor=actor, detail={"to": new_class.value})
            label = {
                "span": [alert.first_ts, alert.last_ts],
                "anomaly_class": new_class.value,
                "actor": actor,
            }
            return alert, label
        key = (alert.status, action)
        if key not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"{action} is illegal from {alert.status}")
        alert.status = LEGAL_TRANSITIONS[key]
        if alert.status == STATUS_DISMISSED:
            self._last_dismiss_ts[alert.anomaly_class] = max(
                self._last_dismiss_ts.get(alert.anomaly_class, 0), ts, alert.last_ts
            )
            self._open_by_class.pop(alert.anomaly_class, None)
        if alert.status == STATUS_VALIDATED:
            self._open_by_class.pop(alert.anomaly_class, None)
        self._audit("transition", alert.id, ts, actor=actor, detail={"action": action})
        return alert, None

    def add_note(self, alert_id: int, actor: str, ts: int, text: str) -> None:
        alert = self.alerts.get(alert_id)
        if alert is None:
            raise UnknownAlert(f"no alert {alert_id}")
        alert.notes.append({"actor": actor, "ts": ts, "text": text})
        self._audit("note", alert_id, ts, actor=actor, detail={"text": text})

    # -- audit ------------------------------------------------------------------

    def _audit(self, kind: str, alert_id: int, ts: int, actor: str = "", detail=None) -> None:
        self.audit.append(
            {
                "seq": len(self.audit),
                "kind": kind,
                "alert_id": alert_id,
                "ts": ts,
                "actor": actor,
                "detail": detail or {},
            }
        )

    def state_json(self) -> dict:
        return {str(i): a.to_json() for i, a in sorted(self.alerts.items())}


def replay_audit(
    audit: list[dict],
    policy: AlertPolicy = AlertPolicy(),
    cause_matrix: CauseMatrix | None = None,
) -> AlertEngine:
    """Rebuild engine state from an audit stream (append-only log replay)."""
    engine = AlertEngine(policy, cause_matrix)
    for entry in audit:
        kind = entry["kind"]
        detail = entry["detail"]
        if kind in ("created", "extended", "suppressed"):
            event = FusedEvent(
                ts=detail["ts"],
                anomaly_class=AnomalyClass(detail["anomaly_class"]),
                certainty=detail["certainty"],
                votes=detail["votes"],
                classifier_class=AnomalyClass(detail["classifier_class"]),
                classifier_prob=detail["classifier_prob"],
            )
            engine.process(event)
        elif kind == "transition":
            engine.transition(entry["alert_id"], detail["action"], entry["actor"], entry["ts"])
        elif kind == "relabel":
            engine.transition(
                entry["alert_id"], "relabel", entry["actor"], entry["ts"],
                relabel_class=detail["to"],
            )
        elif kind == "note":
            engine.add_note(entry["alert_id"], entry["actor"], entry["ts"], detail["text"])
    return engine


def expand_expert_span(label: dict, dataset_ts: list[int]) -> list[dict]:
    """Explode a span-shaped relabel into per-row expert entries."""
    lo, hi = label["span"]
    return [
        {"ts": t, "anomaly_class": label["anomaly_class"], "actor": label.get("actor", "expert")}
        for t in dataset_ts
        if lo <= t <= hi
    ]


def save_alerts(path: str | Path, engine: AlertEngine) -> None:
    Path(path).write_text(
        json.dumps(
            {"alerts": engine.state_json(), "audit": engine.audit},
            sort_keys=True,
        )
    )
