"""Command-line entry point.

Exit codes: 0 success, 1 validation problem (bad arguments, bad config,
missing inputs), 2 runtime failure.
"""

from __future__ import annotations

import json
import math
import sys
import time
from pathlib import Path

import click
import numpy as np

from . import forecast as fc
from .config import ConfigError, PipelineConfig, load_config, save_config
from .features import FeatureBuilder, FeatureParams, FeatureSchema, fit_from_records
from .ingest import run_collector
from .pipeline import AnalysisEngine, LivePipeline, MissingModels, ModelBundle, run_batch
from .semisup import (
    ForestModel,
    ForestParams,
    LabeledDataset,
    default_rules,
    evaluate_predictions,
    merge_human,
    propagate,
    train_forest,
    tune,
)
from .simulator import (
    MillSimulator,
    SimConfig,
    SimulatorError,
    load_scenario_file,
    write_truth_file,
)
from .simserver import SimulatorServer
from .store import (
    InvalidRange,
    StoreError,
    StoreReader,
    StoreWriter,
    TimeRangeQuery,
    export,
)
from .unsup import DetectorParams, Ensemble, fit_ensemble

VALIDATION_ERRORS = (
    ConfigError,
    InvalidRange,
    SimulatorError,
    MissingModels,
    FileNotFoundError,
    ValueError,
)


def _endpoint(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


@click.group()
def cli():
    """Predictive-maintenance and anomaly-detection stack for a simulated
    milling machine."""


# ----------------------------------------------------------------- sim ----


@cli.group()
def sim():
    """Machine simulator."""


@sim.command("serve")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--tick-ms", type=int, default=1000, show_default=True)
@click.option("--listen", default="127.0.0.1:5531", show_default=True)
@click.option("--scenario-file", type=click.Path(exists=True), default=None)
@click.option("--truth", "truth_file", type=click.Path(), default=None,
              help="Ground-truth sidecar NDJSON (never sent on the wire).")
def sim_serve(seed, tick_ms, listen, scenario_file, truth_file):
    """Serve telemetry over TCP, pacing the simulator in real time."""
    simulator = MillSimulator(SimConfig(seed=seed, tick_ms=tick_ms))
    if scenario_file:
        for scn in load_scenario_file(scenario_file):
            simulator.inject(scn)
    host, port = _endpoint(listen)
    server = SimulatorServer(simulator, host, port, truth_path=truth_file)
    click.echo(f"serving simulator on {host}:{port} (tick {tick_ms} ms)")
    server.serve_forever()


@sim.command("corpus")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ticks", type=int, required=True, help="Number of snapshots to emit.")
@click.option("--tick-ms", type=int, default=1000, show_default=True)
@click.option("--scenario-file", type=click.Path(exists=True), default=None)
@click.option("--out", "out_store", type=click.Path(), required=True)
@click.option("--truth", "truth_file", type=click.Path(), default=None)
def sim_corpus(seed, ticks, tick_ms, scenario_file, out_store, truth_file):
    """Generate a corpus offline straight into a store."""
    simulator = MillSimulator(SimConfig(seed=seed, tick_ms=tick_ms))
    if scenario_file:
        for scn in load_scenario_file(scenario_file):
            simulator.inject(scn)
    with StoreWriter(out_store) as writer:
        writer.write_meta({"source": "sim-corpus", "seed": seed, "interval_ms": tick_ms})
        for _ in range(ticks):
            writer.append(simulator.step().to_record())
    if truth_file:
        write_truth_file(truth_file, simulator.ground_truth())
    click.echo(f"wrote {ticks} snapshots to {out_store}")


# -------------------------------------------------------------- ingest ----


@cli.group()
def ingest():
    """Telemetry collection and export."""


@ingest.command("run")
@click.option("--connect", default="127.0.0.1:5531", show_default=True)
@click.option("--interval-ms", type=int, default=1000, show_default=True)
@click.option("--store", "store_path", type=click.Path(), required=True)
@click.option("--max-records", type=int, default=None)
def ingest_run(connect, interval_ms, store_path, max_records):
    """Subscribe to an endpoint and persist snapshots (Ctrl-C to stop)."""
    n = run_collector(_endpoint(connect), interval_ms, store_path, max_records=max_records)
    click.echo(f"collected {n} records into {store_path}")


@ingest.command("export")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "ndjson"]), default="ndjson")
@click.option("--from", "from_ts", type=int, default=None)
@click.option("--to", "to_ts", type=int, default=None)
@click.option("--out", type=click.Path(), default=None, help="default: stdout")
def ingest_export(store_path, fmt, from_ts, to_ts, out):
    """Export records between timestamps as CSV or NDJSON."""
    reader = StoreReader(store_path)
    if out:
        with open(out, "w") as fh:
            n = export(reader, fmt, fh, from_ts, to_ts)
    else:
        n = export(reader, fmt, sys.stdout, from_ts, to_ts)
    click.echo(f"exported {n} records", err=True)


# ------------------------------------------------------------- features ----


@cli.group()
def features():
    """Feature schema fitting."""


@features.command("fit")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--rmax", type=float, default=0.95, show_default=True)
@click.option("--window", type=int, default=40, show_default=True)
@click.option("--v-nom", type=float, default=48.0, show_default=True)
@click.option("--to", "to_ts", type=int, default=None,
              help="Fit on records strictly before this ts (training split).")
def features_fit(store_path, out_path, rmax, window, v_nom, to_ts):
    """Fit vocabularies, robust scaling and collinearity pruning."""
    records = StoreReader(store_path).iter_records(to_ts=to_ts)
    params = FeatureParams(r_max=rmax, window=window, v_nom=v_nom)
    schema, rows = fit_from_records(records, params)
    schema.save(out_path)
    click.echo(
        f"schema: {schema.dim} columns, {len(schema.dropped)} pruned, "
        f"{len(rows)} training rows -> {out_path}"
    )


# --------------------------------------------------------------- detect ----


@cli.group()
def detect():
    """Unsupervised ensemble."""


@detect.command("fit-unsup")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--to", "to_ts", type=int, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--contamination", type=float, default=0.02, show_default=True)
@click.option("--mcd-starts", type=int, default=500, show_default=True)
def detect_fit_unsup(store_path, schema_path, out_path, to_ts, seed, contamination, mcd_starts):
    """Fit the four-detector ensemble on (nominal) training telemetry."""
    schema = FeatureSchema.load(schema_path)
    builder = FeatureBuilder(schema.params, schema.profile)
    rows = list(builder.stream(StoreReader(store_path).iter_records(to_ts=to_ts)))
    X = np.array([schema.transform_raw(r.raw) for r in rows])
    params = DetectorParams(seed=seed, contamination=contamination, mcd_n_starts=mcd_starts)
    ensemble = fit_ensemble(X, params)
    ensemble.save(out_path)
    click.echo(f"ensemble fitted on {len(X)} rows -> {out_path}")


@detect.command("judge")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), required=True)
@click.option("--models", "models_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
def detect_judge(store_path, schema_path, models_path, out_path):
    """Score every snapshot; writes a verdict NDJSON."""
    schema = FeatureSchema.load(schema_path)
    ensemble = Ensemble.load(models_path)
    builder = FeatureBuilder(schema.params, schema.profile)
    n = 0
    with open(out_path, "w") as fh:
        for row in builder.stream(StoreReader(store_path).iter_records()):
            v = ensemble.judge(schema.transform_raw(row.raw), row.ts)
            fh.write(json.dumps(v.to_json(), sort_keys=True) + "\n")
            n += 1
    click.echo(f"judged {n} rows -> {out_path}")


# ---------------------------------------------------------------- train ----


@cli.group()
def train():
    """Dataset building and classifier training."""


@train.command("dataset")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), required=True)
@click.option("--models", "models_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--expert", "expert_path", type=click.Path(exists=True), default=None,
              help="Span-shaped expert labels (NDJSON) from alert relabels.")
def train_dataset(store_path, schema_path, models_path, out_path, expert_path):
    """Propagate rule labels over ensemble flags into a labeled dataset."""
    schema = FeatureSchema.load(schema_path)
    ensemble = Ensemble.load(models_path)
    builder = FeatureBuilder(schema.params, schema.profile)
    rows = list(builder.stream(StoreReader(store_path).iter_records()))
    X = np.array([schema.transform_raw(r.raw) for r in rows])
    verdicts = ensemble.judge_all(X, [r.ts for r in rows])
    rules = default_rules(schema.profile)
    dataset = propagate(verdicts, rows, rules, X=X)
    if expert_path:
        from .alerts import expand_expert_span

        entries = []
        for line in Path(expert_path).read_text().splitlines():
            if line.strip():
                entries.extend(expand_expert_span(json.loads(line), dataset.ts))
        dataset = merge_human(dataset, entries)
    dataset.save(out_path)
    n_anomalous = sum(1 for lbl in dataset.labels if lbl.value != "Normal")
    click.echo(
        f"dataset: {len(dataset)} rows, {n_anomalous} anomalous, "
        f"{len(dataset.events)} event spans, hash {dataset.version_hash[:12]} -> {out_path}"
    )


@train.command("classifier")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--tune", "do_tune", is_flag=True, default=False)
@click.option("--budget", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--trial-log", type=click.Path(), default=None)
def train_classifier(dataset_path, out_path, do_tune, budget, seed, trial_log):
    """Train the forest classifier (optionally with random search)."""
    dataset = LabeledDataset.load(dataset_path)
    y = [lbl.value for lbl in dataset.labels]
    classes = dataset.classes
    t0 = time.monotonic()
    if do_tune:
        params, model, trials = tune(dataset.X, y, budget=budget, seed=seed, classes=classes)
        if trial_log:
            Path(trial_log).write_text(
                json.dumps([t.to_json() for t in trials], indent=2)
            )
        click.echo(f"best params: {params.to_json()}")
    else:
        model = train_forest(
            dataset.X, y, ForestParams(seed=seed), classes=classes,
            dataset_hash=dataset.version_hash,
        )
    model.save(out_path)
    click.echo(
        f"forest trained on {len(dataset)} rows in {time.monotonic() - t0:.1f}s "
        f"(wall-clock budget log) -> {out_path}"
    )


@cli.command("eval")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--test", "test_path", type=click.Path(exists=True), required=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
def eval_cmd(model_path, test_path, report_path):
    """Evaluate a classifier on a held-out labeled dataset."""
    model = ForestModel.load(model_path)
    dataset = LabeledDataset.load(test_path)
    pred, _ = model.predict(dataset.X)
    truth = [lbl.value for lbl in dataset.labels]
    classes = sorted(set(truth) | set(pred), key=lambda c: (c != "Normal", c))
    report = evaluate_predictions(truth, pred, classes)
    Path(report_path).write_text(json.dumps(report.to_json(), indent=2, sort_keys=True))
    click.echo(
        f"f1_macro={report.f1_macro:.4f} kappa={report.kappa:.4f} mcc={report.mcc:.4f}"
        f" -> {report_path}"
    )


# -------------------------------------------------------------- forecast ----


@cli.group("forecast")
def forecast_group():
    """Utilization forecasting."""


@forecast_group.command("train")
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Pipeline config supplying the forecast section.")
@click.option("--curve", "curve_path", type=click.Path(), default=None,
              help="Write the loss curve as CSV.")
def forecast_train(store_path, out_path, config_path, curve_path):
    """Train the utilization forecaster on stored telemetry."""
    cfg = load_config(config_path).forecast if config_path else PipelineConfig().forecast
    series = fc.utilization_series(StoreReader(store_path).iter_records(), cfg.model.step_s)
    x, y, _ = fc.make_windows(series, cfg.model.input_len, cfg.model.horizon, cfg.stride)
    result = fc.train(cfg.model, x, y)
    result.model.save(out_path)
    if curve_path:
        with open(curve_path, "w") as fh:
            fh.write("epoch,train_mae,val_mae\n")
            for i, (t, v) in enumerate(zip(result.train_curve, result.val_curve)):
                fh.write(f"{i},{t},{v}\n")
    click.echo(
        f"forecaster trained on {len(x)} windows, best epoch {result.best_epoch}, "
        f"{result.wall_s:.1f}s wall -> {out_path}"
    )


@forecast_group.command("predict")
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--at", "at_ts", type=int, default=None,
              help="Forecast from this ts (default: end of store).")
def forecast_predict(model_path, store_path, at_ts):
    """Emit a ForecastSeries JSON from the latest stored window."""
    model = fc.NHitsModel.load(model_path)
    cfg = model.config
    records = StoreReader(store_path).iter_records(to_ts=at_ts)
    series = fc.utilization_series(records, cfg.step_s)
    if len(series) < cfg.input_len:
        raise click.ClickException(
            f"need {cfg.input_len} resampled points, have {len(series)}"
        )
    seg = series.segment[-1]
    values = series.values[series.segment == seg]
    if len(values) < cfg.input_len:
        raise click.ClickException("newest gap-free run is too short")
    forecast = model.predict(values[-cfg.input_len:])
    fs = fc.ForecastSeries(
        base_ts=int(series.ts[series.segment == seg][-1]),
        step_s=cfg.step_s,
        values=[float(v) for v in forecast],
    )
    click.echo(json.dumps(fs.to_json()))


# ----------------------------------------------------------------- serve ----


@cli.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--replay", "replay_store", type=click.Path(exists=True), default=None,
              help="Drive the pipeline from a stored corpus instead of the live link.")
@click.option("--speed", type=float, default=None,
              help="Replay speed factor (default: as fast as possible).")
def serve_cmd(config_path, replay_store, speed):
    """Run the full service: pipeline, HTTP API, event stream."""
    from .api import ApiServer

    config = load_config(config_path)
    bundle = ModelBundle.load(config.models_dir)
    writer = None
    telemetry_store = replay_store or config.stores.telemetry
    if replay_store is None:
        Path(config.stores.telemetry).mkdir(parents=True, exist_ok=True)
        writer = StoreWriter(config.stores.telemetry)
    pipeline = LivePipeline(config, bundle, telemetry_writer=writer)
    host, port = _endpoint(config.api.bind)
    server = ApiServer(
        pipeline, config,
        telemetry_store=telemetry_store,
        host=host, port=port,
        static_dir=config.api.static_dir,
        expert_labels_path=config.stores.expert_labels,
    )
    server.start()
    if replay_store is not None:
        pipeline.run_replay_source(replay_store, speed or math.inf)
    else:
        pipeline.run_live_source(_endpoint(config.collector.connect), config.collector.interval_ms)
    pipeline.run_forecast_refresher(telemetry_store)
    click.echo(f"service on http://{server.address[0]}:{server.address[1]}")
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pipeline.stop()
        server.stop()
        if writer is not None:
            writer.close()


@cli.command("replay")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--store", "store_path", type=click.Path(exists=True), required=True)
@click.option("--out-dir", type=click.Path(), required=True)
def replay_cmd(config_path, store_path, out_dir):
    """Offline batch run over a corpus; writes verdict and alert logs."""
    config = load_config(config_path)
    bundle = ModelBundle.load(config.models_dir)
    engine = AnalysisEngine(bundle, config.alert_policy, config.cause_matrix)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    run_batch(
        engine,
        StoreReader(store_path).iter_records(),
        verdict_path=out / "verdicts.ndjson",
        alert_path=out / "alerts.ndjson",
    )
    click.echo(
        f"{len(engine.verdict_lines)} verdicts, "
        f"{len(engine.alert_engine.alerts)} alerts -> {out_dir}"
    )


@cli.command("config-init")
@click.option("--out", "out_path", type=click.Path(), required=True)
def config_init(out_path):
    """Write a fully documented default config file."""
    save_config(out_path, PipelineConfig())
    click.echo(f"default config -> {out_path}")


def main():
    try:
        cli.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(1)
    except click.Abort:
        sys.exit(1)
    except VALIDATION_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except StoreError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(2)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"runtime error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
