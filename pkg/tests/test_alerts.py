import pytest

from detecta.alerts import (
    Alert,
    AlertEngine,
    AlertPolicy,
    CauseMatrix,
    FusedEvent,
    IllegalTransition,
    MissingRow,
    default_cause_matrix,
    expand_expert_span,
    fuse,
    replay_audit,
)
from detecta.taxonomy import AnomalyClass
from detecta.unsup import UnsupVerdict


def verdict(votes, ts=0):
    return UnsupVerdict(
        ts=ts,
        scores={k: 0.0 for k in ("iforest", "lof", "pca", "mcd")},
        flags={k: i < votes for i, k in enumerate(("iforest", "lof", "pca", "mcd"))},
        votes=votes,
        certainty=votes / 4,
        anomalous=votes >= 2,
    )


def event(ts, cls="ProlongedOff", certainty=0.9, votes=3):
    return FusedEvent(
        ts=ts,
        anomaly_class=AnomalyClass(cls),
        certainty=certainty,
        votes=votes,
        classifier_class=AnomalyClass(cls),
        classifier_prob=certainty,
    )


# ------------------------------------------------------------------- fuse --


def test_fuse_full_agreement():
    f = fuse(verdict(4), ("ProlongedOff", 1.0))
    assert f.anomaly_class == AnomalyClass.PROLONGED_OFF
    assert f.certainty == 1.0


def test_fuse_all_quiet_normal():
    f = fuse(verdict(0), ("Normal", 1.0))
    assert f.anomaly_class == AnomalyClass.NORMAL
    assert f.certainty == 0.5  # 0 votes + certain-normal classifier


def test_fuse_unsup_overrides_normal_to_novelty():
    f = fuse(verdict(3), ("Normal", 0.8), vote_threshold=2)
    assert f.anomaly_class == AnomalyClass.NOVELTY
    # 0.375 votes part + half of the Normal complement
    assert f.certainty == pytest.approx(0.375 + 0.5 * (1.0 - 0.8))
    assert f.classifier_class == AnomalyClass.NORMAL


def test_fuse_below_vote_threshold_keeps_normal():
    f = fuse(verdict(1), ("Normal", 0.9), vote_threshold=2)
    assert f.anomaly_class == AnomalyClass.NORMAL


# ------------------------------------------------------------ cause matrix --


def test_default_matrix_param_fluctuation_cyber_first():
    ranked = default_cause_matrix().rank(AnomalyClass.PARAM_FLUCTUATION)
    assert ranked[0] == ("Cyber", 0.8)


def test_uniform_row_ties_keep_column_order():
    weights = default_cause_matrix().to_json()
    weights["Novelty"] = {"Mechanical": 0.5, "Human": 0.5, "Cyber": 0.5}
    m = CauseMatrix.from_json(weights)
    assert [c for c, _ in m.rank(AnomalyClass.NOVELTY)] == ["Mechanical", "Human", "Cyber"]


def test_matrix_missing_row_rejected():
    weights = default_cause_matrix().to_json()
    del weights["ProlongedOff"]
    with pytest.raises(MissingRow):
        CauseMatrix.from_json(weights)


def test_rank_is_pure_lookup():
    m = default_cause_matrix()
    a = m.rank(AnomalyClass.PROLONGED_OFF)
    b = m.rank(AnomalyClass.PROLONGED_OFF)
    assert a == b == [("Human", 0.6), ("Mechanical", 0.3), ("Cyber", 0.1)]


# ------------------------------------------------------------ alert engine --


def test_contiguous_events_merge_into_one_alert():
    engine = AlertEngine()
    for i in range(10):
        engine.process(event(i * 1000))
    assert len(engine.alerts) == 1
    alert = engine.alerts[1]
    assert alert.first_ts == 0 and alert.last_ts == 9000 and alert.events == 10


def test_low_certainty_never_alerts():
    engine = AlertEngine(AlertPolicy(min_certainty=0.5))
    assert engine.process(event(0, certainty=0.4)) is None
    assert engine.alerts == {}


def test_gap_beyond_merge_opens_new_alert():
    engine = AlertEngine(AlertPolicy(merge_gap_s=60))
    engine.process(event(0))
    engine.process(event(61_001))
    assert len(engine.alerts) == 2


def test_distinct_classes_get_distinct_alerts():
    engine = AlertEngine()
    engine.process(event(0, cls="ProlongedOff"))
    engine.process(event(1000, cls="ParamFluctuation"))
    assert len(engine.alerts) == 2


def test_lifecycle_legal_path_and_guards():
    engine = AlertEngine()
    engine.process(event(0))
    with pytest.raises(IllegalTransition):
        engine.transition(1, "validate", "op", ts=1000)  # must acknowledge first
    engine.transition(1, "ack", "op", ts=1000)
    engine.transition(1, "validate", "op", ts=2000)
    assert engine.alerts[1].status == "Validated"
    with pytest.raises(IllegalTransition):
        engine.transition(1, "dismiss", "op", ts=3000)


def test_relabel_emits_expert_label():
    engine = AlertEngine()
    for i in range(3):
        engine.process(event(i * 1000, cls="Novelty"))
    alert, label = engine.transition(
        1, "relabel", "expert1", ts=5000, relabel_class="ParamFluctuation"
    )
    assert alert.expert_relabel == AnomalyClass.PARAM_FLUCTUATION
    assert label == {
        "span": [0, 2000], "anomaly_class": "ParamFluctuation", "actor": "expert1",
    }
    rows = expand_expert_span(label, [0, 1000, 2000, 9000])
    assert [r["ts"] for r in rows] == [0, 1000, 2000]


def test_dismiss_cooldown_suppresses_same_class():
    engine = AlertEngine(AlertPolicy(cooldown_s=120))
    engine.process(event(0))
    engine.transition(1, "ack", "op", ts=1000)
    engine.transition(1, "dismiss", "op", ts=1000)
    assert engine.process(event(60_000)) is None  # inside cooldown
    assert engine.alerts[1].suppressed_events == 1
    made = engine.process(event(300_000))  # cooldown expired
    assert made is not None and made.id == 2


def test_every_strong_event_belongs_to_exactly_one_alert():
    engine = AlertEngine()
    times = [0, 1000, 2000, 200_000, 201_000, 500_000]
    for t in times:
        engine.process(event(t))
    touched = [
        e for e in engine.audit if e["kind"] in ("created", "extended", "suppressed")
    ]
    assert len(touched) == len(times)
    by_alert = {}
    for e in touched:
        by_alert.setdefault(e["alert_id"], []).append(e["detail"]["ts"])
    assert sorted(t for ts in by_alert.values() for t in ts) == times
    assert set(by_alert) == {1, 2, 3}


def test_audit_replay_rebuilds_identical_state():
    engine = AlertEngine()
    for i in range(5):
        engine.process(event(i * 1000, cls="HighConstUtil", votes=4))
    engine.process(event(400_000, cls="Novelty", certainty=0.8))
    engine.transition(1, "ack", "op", ts=5000)
    engine.transition(1, "dismiss", "op", ts=6000)
    engine.process(event(50_000, cls="HighConstUtil"))  # suppressed by cooldown
    engine.transition(2, "relabel", "op", ts=401_000, relabel_class="ParamFluctuation")
    engine.add_note(1, "op", 7000, "checked on site")

    rebuilt = replay_audit(engine.audit)
    assert rebuilt.state_json() == engine.state_json()
    assert rebuilt.audit == engine.audit


def test_certainty_tracks_peak_event():
    engine = AlertEngine()
    engine.process(event(0, certainty=0.6, votes=2))
    engine.process(event(1000, certainty=0.95, votes=4))
    engine.process(event(2000, certainty=0.7, votes=3))
    alert = engine.alerts[1]
    assert alert.certainty == 0.95
    assert alert.corroborating_models == 4
