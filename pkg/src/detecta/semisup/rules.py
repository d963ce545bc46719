"""Label-propagation rules: predicates over raw window features whose
thresholds mirror the injected-anomaly signatures.

Rules are total functions evaluated in priority order; the first match wins.
An ensemble-flagged sample matching no rule is labeled Novelty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..features import DataProfile
from ..taxonomy import AnomalyClass


@dataclass(frozen=True)
class RuleThresholds:
    const_util_mean: float = 85.0
    const_util_std_max: float = 2.5
    high_z_util_mean: float = 80.0
    z_p95_factor: float = 0.99
    fast_axes_min: int = 3
    off_duration_p95_multiple: float = 2.0
    param_changes_per_min: float = 5.0

    def to_json(self) -> dict:
        return {
            "const_util_mean": self.const_util_mean,
            "const_util_std_max": self.const_util_std_max,
            "high_z_util_mean": self.high_z_util_mean,
            "z_p95_factor": self.z_p95_factor,
            "fast_axes_min": self.fast_axes_min,
            "off_duration_p95_multiple": self.off_duration_p95_multiple,
            "param_changes_per_min": self.param_changes_per_min,
        }

    @staticmethod
    def from_json(d: dict) -> "RuleThresholds":
        return RuleThresholds(**d)


@dataclass(frozen=True)
class LabelRule:
    anomaly_class: AnomalyClass
    predicate: Callable[[dict], bool]

    def matches(self, raw: dict) -> bool:
        try:
            return bool(self.predicate(raw))
        except (KeyError, TypeError, ValueError):
            return False  # rules are total: malformed input is a non-match


def default_rules(profile: DataProfile, th: RuleThresholds = RuleThresholds()) -> list[LabelRule]:
    """Priority-ordered rules; most specific signatures first."""

    def multi_axis(raw):
        return raw["simultaneous_fast_axes"] >= th.fast_axes_min

    def prolonged_off(raw):
        return (
            raw["state"] == "Off"
            and raw["state_duration_s"]
            >= th.off_duration_p95_multiple * profile.off_p95_s
        )

    def param_fluctuation(raw):
        return (
            raw["param_change_rate_per_min"] >= th.param_changes_per_min
            and raw["state_changes_w"] == 0
        )

    def high_util_high_z(raw):
        mean_util = min(raw["usage_x_mean_w"], raw["usage_y_mean_w"])
        return (
            mean_util >= th.high_z_util_mean
            and raw["z_pos"] >= th.z_p95_factor * profile.z_p95
        )

    def high_const_util(raw):
        means = (raw["usage_x_mean_w"], raw["usage_y_mean_w"], raw["usage_z_mean_w"])
        stds = (raw["usage_x_std_w"], raw["usage_y_std_w"], raw["usage_z_std_w"])
        return min(means) >= th.const_util_mean and max(stds) <= th.const_util_std_max

    return [
        LabelRule(AnomalyClass.MULTI_AXIS_HIGH_SPEED, multi_axis),
        LabelRule(AnomalyClass.PROLONGED_OFF, prolonged_off),
        LabelRule(AnomalyClass.PARAM_FLUCTUATION, param_fluctuation),
        LabelRule(AnomalyClass.HIGH_UTIL_HIGH_Z, high_util_high_z),
        LabelRule(AnomalyClass.HIGH_CONST_UTIL, high_const_util),
    ]


def classify_flagged(raw: dict, rules: list[LabelRule]) -> AnomalyClass:
    for rule in rules:
        if rule.matches(raw):
            return rule.anomaly_class
    return AnomalyClass.NOVELTY
