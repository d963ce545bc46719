"""Shared anomaly vocabulary used by the simulator, labeling and alerting."""

from __future__ import annotations

from enum import Enum


class AnomalyClass(str, Enum):
    NORMAL = "Normal"
    HIGH_CONST_UTIL = "HighConstUtil"
    HIGH_UTIL_HIGH_Z = "HighUtilHighZ"
    MULTI_AXIS_HIGH_SPEED = "MultiAxisHighSpeed"
    PROLONGED_OFF = "ProlongedOff"
    PARAM_FLUCTUATION = "ParamFluctuation"
    NOVELTY = "Novelty"


class ScenarioKind(str, Enum):
    HIGH_CONSTANT_UTILIZATION = "HighConstantUtilization"
    HIGH_UTIL_HIGH_Z = "HighUtilHighZ"
    MULTI_AXIS_HIGH_SPEED = "MultiAxisHighSpeed"
    PROLONGED_OFF = "ProlongedOff"
    PARAM_FLUCTUATION = "ParamFluctuation"
    NOVELTY_DRIFT = "NoveltyDrift"


SCENARIO_CLASS: dict[ScenarioKind, AnomalyClass] = {
    ScenarioKind.HIGH_CONSTANT_UTILIZATION: AnomalyClass.HIGH_CONST_UTIL,
    ScenarioKind.HIGH_UTIL_HIGH_Z: AnomalyClass.HIGH_UTIL_HIGH_Z,
    ScenarioKind.MULTI_AXIS_HIGH_SPEED: AnomalyClass.MULTI_AXIS_HIGH_SPEED,
    ScenarioKind.PROLONGED_OFF: AnomalyClass.PROLONGED_OFF,
    ScenarioKind.PARAM_FLUCTUATION: AnomalyClass.PARAM_FLUCTUATION,
    ScenarioKind.NOVELTY_DRIFT: AnomalyClass.NOVELTY,
}

CAUSE_COLUMNS = ("Mechanical", "Human", "Cyber")
