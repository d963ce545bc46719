"""Scratch prototype of acceptance criterion 4 (not part of the suite)."""
import time

import numpy as np

from detecta.alerts import AlertEngine, AlertPolicy, default_cause_matrix, fuse
from detecta.features import FeatureBuilder, FeatureParams, fit_from_records
from detecta.semisup import (
    ForestParams, default_rules, evaluate_predictions, propagate, train_forest,
)
from detecta.simulator import MillSimulator, SimConfig, make_scenario_script
from detecta.taxonomy import AnomalyClass, ScenarioKind
from detecta.unsup import DetectorParams, fit_ensemble

t_all = time.time()

CLASSES5 = [
    ScenarioKind.HIGH_CONSTANT_UTILIZATION,
    ScenarioKind.HIGH_UTIL_HIGH_Z,
    ScenarioKind.MULTI_AXIS_HIGH_SPEED,
    ScenarioKind.PROLONGED_OFF,
    ScenarioKind.PARAM_FLUCTUATION,
]

cfg = SimConfig(seed=42, tick_ms=1000)
train_cfg = SimConfig(seed=43, tick_ms=1000)

# --- training corpus: 4 h nominal
t0 = time.time()
train_sim = MillSimulator(train_cfg)
train_records = [s.to_record() for s in train_sim.run(4 * 3600)]
print(f"train corpus: {time.time()-t0:.1f}s")

# --- evaluation corpus: nominal + 40 scenarios
t0 = time.time()
script = make_scenario_script(
    cfg, CLASSES5, per_kind=8, first_offset_s=1800, gap_s=420,
    duration_s=180, intensity=0.8, seed=7,
)
sim = MillSimulator(cfg)
for scn in script:
    sim.inject(scn)
last_end = max(s.end_ts for s in script)
ticks = int((last_end - cfg.start_ts_ms) / 1000) + 2 * 3600
records = [s.to_record() for s in sim.run(ticks)]
truth = sim.ground_truth()
nominal_s = ticks - sum(int(s.duration_s) for s in script)
print(f"eval corpus: {ticks} ticks ({ticks/3600:.1f} h, {nominal_s/3600:.1f} h nominal), {time.time()-t0:.1f}s")

# --- features
t0 = time.time()
params = FeatureParams()
schema, train_rows = fit_from_records(train_records, params)
X_train = np.array([schema.transform_raw(r.raw) for r in train_rows])
print(f"schema: {schema.dim} cols, {len(schema.dropped)} dropped, {time.time()-t0:.1f}s")

# --- ensemble (detectors see a stride-3 subsample of the training corpus)
t0 = time.time()
det_params = DetectorParams(seed=1)
ens = fit_ensemble(X_train[::3], det_params)
print(f"ensemble fit on {len(X_train[::3])}: {time.time()-t0:.1f}s; rates={ens.training_flag_rate}")

# --- judge eval corpus
t0 = time.time()
builder = FeatureBuilder(schema.params, schema.profile)
rows = list(builder.stream(records))
X = np.array([schema.transform_raw(r.raw) for r in rows])
print(f"featurize eval: {len(rows)} rows, {time.time()-t0:.1f}s")
t0 = time.time()
verdicts = ens.judge_all(X, [r.ts for r in rows])
print(f"judge_all: {time.time()-t0:.1f}s; flagged={sum(v.anomalous for v in verdicts)}")

# --- propagate
t0 = time.time()
rules = default_rules(schema.profile)
dataset = propagate(verdicts, rows, rules, X=X)
from collections import Counter
print("label counts:", Counter(l.value for l in dataset.labels))
print(f"propagate: {time.time()-t0:.1f}s, {len(dataset.events)} events")

# --- how well do propagated labels match ground truth?
def truth_class_at(ts):
    for lbl in truth:
        if lbl.start_ts <= ts < lbl.end_ts:
            return lbl.anomaly_class
    return AnomalyClass.NORMAL

agree = sum(1 for t, l in zip(dataset.ts, dataset.labels) if truth_class_at(t) == l)
print(f"propagated vs truth row agreement: {agree/len(dataset):.3f}")
per_class_flagged = Counter()
per_class_total = Counter()
for t, l in zip(dataset.ts, dataset.labels):
    tc = truth_class_at(t)
    if tc != AnomalyClass.NORMAL:
        per_class_total[tc.value] += 1
        if l != AnomalyClass.NORMAL:
            per_class_flagged[tc.value] += 1
for c in per_class_total:
    print(f"  {c}: flagged {per_class_flagged[c]}/{per_class_total[c]}",
          f"({per_class_flagged[c]/per_class_total[c]:.2f})")

# --- classifier
t0 = time.time()
split = int(len(dataset) * 0.7)
y = [l.value for l in dataset.labels]
forest = train_forest(dataset.X[:split], y[:split], ForestParams(seed=3), classes=dataset.classes)
pred, _ = forest.predict(dataset.X[split:])
rep = evaluate_predictions(y[split:], pred, dataset.classes)
print(f"forest train+eval: {time.time()-t0:.1f}s")
print(f"F1={rep.f1_macro:.4f} Kappa={rep.kappa:.4f} MCC={rep.mcc:.4f}")
print("test label counts:", Counter(y[split:]))

# --- full fused run -> alerts
t0 = time.time()
engine = AlertEngine(AlertPolicy(), default_cause_matrix())
cls_all, prob_all = forest.predict(dataset.X)
for v, c, p in zip(verdicts, cls_all, prob_all):
    engine.process(fuse(v, (c, float(p)), det_params.vote_threshold))
alerts = list(engine.alerts.values())
print(f"alert pass: {time.time()-t0:.1f}s; {len(alerts)} alerts")

pad = 60_000
def overlaps(a, lo, hi):
    return a.first_ts <= hi and lo <= a.last_ts

hits = 0
for lbl in truth:
    if any(overlaps(a, lbl.start_ts - pad, lbl.end_ts + pad) for a in alerts):
        hits += 1
fp = [a for a in alerts if not any(
    overlaps(a, lbl.start_ts - pad, lbl.end_ts + pad) for lbl in truth)]
print(f"event recall: {hits}/{len(truth)} = {hits/len(truth):.2f}")
print(f"false-positive alerts: {len(fp)}/{len(alerts)} = {len(fp)/max(len(alerts),1):.2f}")
for a in fp[:10]:
    print("  FP:", a.anomaly_class.value, a.first_ts, (a.last_ts-a.first_ts)/1000, a.certainty)
print(f"TOTAL: {time.time()-t_all:.1f}s")
