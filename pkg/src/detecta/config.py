"""Declarative pipeline configuration: one JSON file, validated fully at
startup, unknown keys rejected by name, every default documented here."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .alerts import DEFAULT_CAUSE_WEIGHTS, AlertPolicy, CauseMatrix
from .features import FeatureParams
from .forecast import NHitsConfig
from .semisup import ForestParams, RuleThresholds
from .unsup import DetectorParams


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class SimulatorSection:
    seed: int = 0
    tick_ms: int = 1000
    listen: str = "127.0.0.1:5531"
    scenario_file: str | None = None
    truth_file: str | None = None


@dataclass(frozen=True)
class CollectorSection:
    connect: str = "127.0.0.1:5531"
    interval_ms: int = 1000


@dataclass(frozen=True)
class StoreSection:
    telemetry: str = "data/telemetry"
    verdicts: str = "data/verdicts.ndjson"
    alerts: str = "data/alerts.json"
    expert_labels: str = "data/expert_labels.ndjson"


@dataclass(frozen=True)
class ForecastSection:
    model: NHitsConfig = field(default_factory=NHitsConfig)
    stride: int = 5
    refresh_min: float = 5.0
    seasonal_period: int = 32


@dataclass(frozen=True)
class ApiSection:
    bind: str = "127.0.0.1:8731"
    static_dir: str | None = None
    stream_queue: int = 1024


@dataclass(frozen=True)
class PipelineConfig:
    simulator: SimulatorSection = field(default_factory=SimulatorSection)
    collector: CollectorSection = field(default_factory=CollectorSection)
    stores: StoreSection = field(default_factory=StoreSection)
    features: FeatureParams = field(default_factory=FeatureParams)
    detectors: DetectorParams = field(default_factory=DetectorParams)
    rules: RuleThresholds = field(default_factory=RuleThresholds)
    classifier: ForestParams = field(default_factory=ForestParams)
    forecast: ForecastSection = field(default_factory=ForecastSection)
    alert_policy: AlertPolicy = field(default_factory=AlertPolicy)
    cause_matrix: CauseMatrix = field(
        default_factory=lambda: CauseMatrix(
            {k: dict(v) for k, v in DEFAULT_CAUSE_WEIGHTS.items()}
        )
    )
    api: ApiSection = field(default_factory=ApiSection)
    models_dir: str = "models"

    def to_json(self) -> dict:
        d = asdict(self)
        d["cause_matrix"] = self.cause_matrix.to_json()
        d["features"]["categoricals"] = list(self.features.categoricals)
        fm = d["forecast"]["model"]
        for k in ("kernels", "ratios", "hidden"):
            fm[k] = list(fm[k])
        return d


_SECTION_TYPES = {
    "simulator": SimulatorSection,
    "collector": CollectorSection,
    "stores": StoreSection,
    "features": FeatureParams,
    "detectors": DetectorParams,
    "rules": RuleThresholds,
    "classifier": ForestParams,
    "alert_policy": AlertPolicy,
    "api": ApiSection,
}


def _build(cls, data: dict, path: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config key {path}.{sorted(unknown)[0]}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        kwargs[f.name] = tuple(v) if isinstance(v, list) and f.name in (
            "categoricals", "kernels", "ratios", "hidden",
        ) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {path} section: {exc}") from exc


def parse_config(data: dict) -> PipelineConfig:
    allowed = {f.name for f in fields(PipelineConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]}")
    kwargs = {}
    for name, cls in _SECTION_TYPES.items():
        if name in data:
            if not isinstance(data[name], dict):
                raise ConfigError(f"section {name} must be an object")
            kwargs[name] = _build(cls, data[name], name)
    if "forecast" in data:
        fc = dict(data["forecast"])
        extra = set(fc) - {"model", "stride", "refresh_min", "seasonal_period"}
        if extra:
            raise ConfigError(f"unknown config key forecast.{sorted(extra)[0]}")
        model = _build(NHitsConfig, fc.pop("model", {}), "forecast.model")
        kwargs["forecast"] = ForecastSection(model=model, **fc)
    if "cause_matrix" in data:
        try:
            kwargs["cause_matrix"] = CauseMatrix.from_json(data["cause_matrix"])
        except Exception as exc:
            raise ConfigError(f"invalid cause_matrix: {exc}") from exc
    if "models_dir" in data:
        kwargs["models_dir"] = data["models_dir"]
    return PipelineConfig(**kwargs)


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"no config file at {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    return parse_config(data)


def save_config(path: str | Path, config: PipelineConfig) -> None:
    Path(path).write_text(json.dumps(config.to_json(), indent=2, sort_keys=True))


def hot_reloadable_diff(old: PipelineConfig, new: PipelineConfig) -> list[str]:
    """Keys that differ and are NOT hot-reloadable (only the alert policy and
    cause matrix may change at runtime)."""
    frozen = []
    o, n = old.to_json(), new.to_json()
    for key in o:
        if key in ("alert_policy", "cause_matrix"):
            continue
        if o[key] != n[key]:
            frozen.append(key)
    return frozen
