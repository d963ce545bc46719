import http.client
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from detecta.api import ApiServer
from detecta.config import (
    ConfigError,
    PipelineConfig,
    load_config,
    parse_config,
    save_config,
)
from detecta.features import FeatureBuilder, FeatureParams, fit_from_records
from detecta.pipeline import AnalysisEngine, LivePipeline, MissingModels, ModelBundle, run_batch
from detecta.semisup import ForestParams, default_rules, propagate, train_forest
from detecta.simulator import AnomalyScenario, MillSimulator, SimConfig
from detecta.store import StoreWriter
from detecta.taxonomy import ScenarioKind
from detecta.unsup import DetectorParams, fit_ensemble


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """Small trained world: corpus store, models dir, config file."""
    root = tmp_path_factory.mktemp("world")
    cfg = SimConfig(seed=101, tick_ms=1000)
    sim = MillSimulator(cfg)
    t0 = cfg.start_ts_ms
    sim.inject(AnomalyScenario(ScenarioKind.HIGH_CONSTANT_UTILIZATION, t0 + 1500_000, 120, 1.0))
    sim.inject(AnomalyScenario(ScenarioKind.PARAM_FLUCTUATION, t0 + 1750_000, 120, 1.0))
    records = [s.to_record() for s in sim.run(2000)]

    store = root / "telemetry"
    with StoreWriter(store) as w:
        w.write_meta({"source": "fixture", "interval_ms": 1000})
        for rec in records:
            w.append(rec)

    params = FeatureParams(window=10)
    train_records = records[:1400]  # nominal head
    schema, rows = fit_from_records(train_records, params)
    X = np.array([schema.transform_raw(r.raw) for r in rows])
    ensemble = fit_ensemble(
        X, DetectorParams(n_trees=40, subsample=128, lof_k=15, mcd_n_starts=30, seed=1)
    )

    builder = FeatureBuilder(schema.params, schema.profile)
    all_rows = list(builder.stream(records))
    X_all = np.array([schema.transform_raw(r.raw) for r in all_rows])
    verdicts = ensemble.judge_all(X_all, [r.ts for r in all_rows])
    dataset = propagate(verdicts, all_rows, default_rules(schema.profile), X=X_all)
    forest = train_forest(
        dataset.X, [lbl.value for lbl in dataset.labels],
        ForestParams(n_trees=30, seed=2), classes=dataset.classes,
    )

    models = root / "models"
    models.mkdir()
    schema.save(models / "schema.json")
    ensemble.save(models / "unsup.json")
    forest.save(models / "forest.json")

    config = parse_config(
        {
            "models_dir": str(models),
            "stores": {
                "telemetry": str(store),
                "expert_labels": str(root / "expert_labels.ndjson"),
            },
            "features": {"window": 10},
        }
    )
    cfg_path = root / "config.json"
    save_config(cfg_path, config)
    return {
        "root": root, "store": store, "models": models,
        "config": load_config(cfg_path), "cfg_path": cfg_path,
        "records": records,
    }


# ----------------------------------------------------------------- config --


def test_config_rejects_unknown_key_by_name():
    with pytest.raises(ConfigError, match="unknown config key alert_policy.coldown_s"):
        parse_config({"alert_policy": {"coldown_s": 5}})
    with pytest.raises(ConfigError, match="unknown config key nonsense"):
        parse_config({"nonsense": 1})


def test_config_round_trip(tmp_path):
    save_config(tmp_path / "c.json", PipelineConfig())
    cfg = load_config(tmp_path / "c.json")
    assert cfg == PipelineConfig()


def test_missing_models_error_lists_training_commands(tmp_path):
    with pytest.raises(MissingModels, match="detecta features fit"):
        ModelBundle.load(tmp_path)


# ------------------------------------------------------ batch/stream parity --


def test_batch_and_replayed_stream_logs_are_byte_identical(world):
    bundle = ModelBundle.load(world["models"])
    config = world["config"]

    batch_engine = AnalysisEngine(bundle, config.alert_policy, config.cause_matrix)
    run_batch(batch_engine, world["records"])

    bundle2 = ModelBundle.load(world["models"])
    live = LivePipeline(config, bundle2)
    live.run_replay_source(world["store"], speed=math.inf)
    deadline = time.monotonic() + 120
    while live.connected or live.last_ts is None:
        assert time.monotonic() < deadline, "replay did not finish"
        time.sleep(0.1)
    live.stop()

    assert live.engine.verdict_lines == batch_engine.verdict_lines
    assert live.engine.alert_log_lines() == batch_engine.alert_log_lines()
    assert len(batch_engine.verdict_lines) > 0
    assert len(batch_engine.alert_engine.alerts) >= 1


# ----------------------------------------------------------------- HTTP API --


@pytest.fixture(scope="module")
def service(world):
    bundle = ModelBundle.load(world["models"])
    live = LivePipeline(world["config"], bundle)
    server = ApiServer(
        live, world["config"],
        telemetry_store=world["store"],
        expert_labels_path=world["config"].stores.expert_labels,
    )
    server.start()
    live.run_replay_source(world["store"], speed=math.inf)
    deadline = time.monotonic() + 120
    while live.connected or live.last_ts is None:
        assert time.monotonic() < deadline
        time.sleep(0.1)
    yield server
    live.stop()
    server.stop()


def api(server, method, path, body=None):
    host, port = server.address
    conn = http.client.HTTPConnection(host, port, timeout=10)
    payload = json.dumps(body) if body is not None else None
    conn.request(method, path, body=payload, headers={"Content-Type": "application/json"})
    resp = conn.getresponse()
    data = json.loads(resp.read())
    conn.close()
    return resp.status, data


def test_state_endpoint(service):
    status, data = api(service, "GET", "/api/v1/state")
    assert status == 200
    assert data["machine_state"] in ("Automatic", "Off", "Interrupted", "Manual")
    assert data["schema_version"] == 1


def test_telemetry_query_and_bad_range(service, world):
    t0 = world["records"][0]["ts"]
    status, data = api(
        service, "GET", f"/api/v1/telemetry?from={t0}&to={t0 + 10_000}&vars=spindle_rpm"
    )
    assert status == 200 and data["count"] == 10
    assert set(data["records"][0]) == {"kind", "ts", "spindle_rpm"}
    status, data = api(service, "GET", f"/api/v1/telemetry?from={t0}&to={t0}")
    assert status == 400
    status, _ = api(service, "GET", "/api/v1/telemetry?from=abc&to=5")
    assert status == 400


def test_anomalies_filtering(service):
    status, data = api(service, "GET", "/api/v1/anomalies?min_certainty=0.0")
    assert status == 200 and data["count"] > 0
    one_class = data["anomalies"][0]["anomaly_class"]
    status, filtered = api(service, "GET", f"/api/v1/anomalies?class={one_class}")
    assert all(a["anomaly_class"] == one_class for a in filtered["anomalies"])


def test_alert_listing_and_lifecycle_idempotent(service):
    status, data = api(service, "GET", "/api/v1/alerts")
    assert status == 200 and data["count"] >= 1
    alert_id = data["alerts"][0]["id"]
    status, r1 = api(service, "POST", f"/api/v1/alerts/{alert_id}/ack", {"actor": "op"})
    assert status == 200 and r1["alert"]["status"] == "Acknowledged"
    status, r2 = api(service, "POST", f"/api/v1/alerts/{alert_id}/ack", {"actor": "op"})
    assert status == 200 and r2.get("idempotent") is True
    status, _ = api(service, "POST", f"/api/v1/alerts/{alert_id}/nonsense")
    assert status == 404
    status, data = api(service, "POST", "/api/v1/alerts/999999/ack")
    assert status == 404


def test_alert_validate_requires_ack_first(service):
    status, data = api(service, "GET", "/api/v1/alerts?status=New")
    if data["count"] == 0:
        pytest.skip("no New alerts left in fixture")
    alert_id = data["alerts"][0]["id"]
    status, resp = api(service, "POST", f"/api/v1/alerts/{alert_id}/validate")
    assert status == 409


def test_relabel_round_trips_to_expert_labels_file(service, world):
    status, data = api(service, "GET", "/api/v1/alerts")
    alert = next(a for a in data["alerts"] if a["status"] in ("New", "Acknowledged"))
    status, resp = api(
        service, "POST", f"/api/v1/alerts/{alert['id']}/relabel",
        {"actor": "expert7", "class": "ParamFluctuation"},
    )
    assert status == 200
    assert resp["expert_label"]["anomaly_class"] == "ParamFluctuation"
    labels_file = Path(world["config"].stores.expert_labels)
    lines = [json.loads(l) for l in labels_file.read_text().splitlines()]
    assert any(
        l["anomaly_class"] == "ParamFluctuation" and l["actor"] == "expert7"
        for l in lines
    )


def test_config_get_and_hot_reload(service):
    status, data = api(service, "GET", "/api/v1/config")
    assert status == 200
    cfg = data["config"]
    cfg["alert_policy"]["min_certainty"] = 0.7
    status, resp = api(service, "PUT", "/api/v1/config", cfg)
    assert status == 200 and "alert_policy" in resp["applied"]
    assert service.pipeline.engine.alert_engine.policy.min_certainty == 0.7
    cfg["detectors"]["contamination"] = 0.1
    status, resp = api(service, "PUT", "/api/v1/config", cfg)
    assert status == 400 and "detectors" in resp["error"]
    cfg["detectors"]["contamination"] = 0.02
    cfg["alert_policy"]["whatever"] = 1
    status, resp = api(service, "PUT", "/api/v1/config", cfg)
    assert status == 400 and "whatever" in resp["error"]


def test_status_endpoint(service):
    status, data = api(service, "GET", "/api/v1/status")
    assert status == 200
    s = data["status"]
    assert s["pipeline"] == "running"
    assert s["alerts_total"] >= 1
    assert "model_versions" in s and "dropped_events" in s


def test_forecast_latest_404_without_model(service):
    status, data = api(service, "GET", "/api/v1/forecast/latest")
    assert status == 404


def test_stream_endpoint_pushes_events(world):
    bundle = ModelBundle.load(world["models"])
    live = LivePipeline(world["config"], bundle)
    server = ApiServer(live, world["config"], telemetry_store=world["store"])
    server.start()
    try:
        host, port = server.address
        conn = http.client.HTTPConnection(host, port, timeout=10)
        conn.request("GET", "/api/v1/stream")
        resp = conn.getresponse()
        assert resp.headers["Content-Type"] == "text/event-stream"
        live.run_replay_source(world["store"], speed=math.inf)
        got = []
        deadline = time.monotonic() + 30
        while len(got) < 5 and time.monotonic() < deadline:
            line = resp.fp.readline().decode()
            if line.startswith("data: "):
                got.append(json.loads(line[6:]))
        conn.close()
        assert len(got) == 5
        assert {e["type"] for e in got} <= {"snapshot", "verdict", "alert", "forecast"}
        ts = [e["ts"] for e in got]
        assert ts == sorted(ts)
    finally:
        live.stop()
        server.stop()


def test_unknown_route_404(service):
    status, data = api(service, "GET", "/api/v1/nope")
    assert status == 404
