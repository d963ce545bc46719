"""Deterministic five-axis milling machine simulator.

Synthesizes labeled telemetry for a machine running piecewise machining
cycles (setup, approach, cut, retract, idle, occasional interrupts and Off
breaks), with injectable anomaly scenarios whose quantitative signatures are
parameterized by percentiles of the machine's own nominal regime.  The same
(seed, scenario script, tick) always produces a byte-identical corpus and
ground-truth stream.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .taxonomy import SCENARIO_CLASS, AnomalyClass, ScenarioKind

AXES = ("x", "y", "z", "b", "c")
LINEAR_AXES = ("x", "y", "z")

STATE_AUTOMATIC = "Automatic"
STATE_OFF = "Off"
STATE_INTERRUPTED = "Interrupted"
STATE_MANUAL = "Manual"

OP_PROGRAM_RUN = "ProgramRun"
OP_JOG = "Jog"
OP_MDI = "MDI"
OP_IDLE = "Idle"

# Legal machine-state transitions: Off<->Manual<->Automatic plus
# Automatic->Interrupted->{Automatic, Off}.
ALLOWED_TRANSITIONS = {
    STATE_OFF: {STATE_OFF, STATE_MANUAL},
    STATE_MANUAL: {STATE_MANUAL, STATE_OFF, STATE_AUTOMATIC},
    STATE_AUTOMATIC: {STATE_AUTOMATIC, STATE_MANUAL, STATE_INTERRUPTED},
    STATE_INTERRUPTED: {STATE_INTERRUPTED, STATE_AUTOMATIC, STATE_OFF},
}

TOOL_CATALOG = {
    1: ("EndMill", 6.0), 2: ("EndMill", 10.0), 3: ("EndMill", 16.0),
    4: ("BallNose", 8.0), 5: ("BallNose", 12.0), 6: ("FaceMill", 50.0),
    7: ("FaceMill", 80.0), 8: ("Drill", 5.0), 9: ("Drill", 8.5),
    10: ("Chamfer", 10.0), 11: ("EndMill", 20.0), 12: ("BallNose", 6.0),
}

EXTRA_NAMES = (
    "coolant_temp_c", "coolant_flow_lpm", "hydraulic_pressure_bar",
    "ambient_temp_c", "vibration_rms_mm_s", "power_draw_kw", "door_open",
    "part_count", "program_runtime_s", "lube_level_pct",
    "net_rx_kbps", "net_tx_kbps",
)

_CALIBRATION_SEED = 0xCA1B
_CALIBRATION_TICKS = 6000


class SimulatorError(Exception):
    pass


class OverlapError(SimulatorError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Knobs of the nominal regime; defaults give a plausible job-shop mix."""

    seed: int = 0
    tick_ms: int = 1000
    start_ts_ms: int = 1_700_000_000_000
    noise_sigma: float = 3.0          # cut-phase utilization noise (% points)
    cut_util_low: float = 40.0
    cut_util_high: float = 80.0
    cycle_mean_s: float = 180.0       # cut-phase duration
    cycle_sd_s: float = 40.0
    idle_low_s: float = 5.0
    idle_high_s: float = 25.0
    p_off_after_part: float = 0.04
    off_mean_s: float = 120.0         # Off durations ~ Exp(off_mean_s)
    p_interrupt_per_part: float = 0.02
    rapid_xy_mm_min: float = 12000.0
    rapid_z_mm_min: float = 9000.0
    rapid_bc_deg_min: float = 1800.0
    max_current_a: float = 12.0
    table_x_mm: float = 800.0
    table_y_mm: float = 600.0
    travel_z_mm: float = 500.0


@dataclass(frozen=True)
class AnomalyScenario:
    kind: ScenarioKind
    start_ts: int                     # epoch ms
    duration_s: float
    intensity: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.intensity <= 1.0:
            raise SimulatorError(f"intensity must be in (0,1], got {self.intensity}")
        if self.duration_s <= 0:
            raise SimulatorError("duration_s must be > 0")

    @property
    def end_ts(self) -> int:
        return self.start_ts + int(round(self.duration_s * 1000))

    def to_json(self) -> dict:
        return {
            "kind": self.kind.value,
            "start_ts": self.start_ts,
            "duration_s": self.duration_s,
            "intensity": self.intensity,
        }

    @staticmethod
    def from_json(d: dict) -> "AnomalyScenario":
        return AnomalyScenario(
            ScenarioKind(d["kind"]), d["start_ts"], d["duration_s"],
            d.get("intensity", 1.0),
        )


@dataclass(frozen=True)
class GroundTruthLabel:
    start_ts: int
    end_ts: int
    anomaly_class: AnomalyClass
    kind: ScenarioKind

    def to_json(self) -> dict:
        return {
            "start_ts": self.start_ts,
            "end_ts": self.end_ts,
            "anomaly_class": self.anomaly_class.value,
            "kind": self.kind.value,
        }


@dataclass(frozen=True)
class NominalProfile:
    """Reference percentiles of the nominal regime, used to scale scenario
    signatures (and nothing else -- detectors estimate their own)."""

    z_p95: float
    speed_p99: dict[str, float]
    off_p95_s: float


@dataclass
class TelemetrySnapshot:
    ts: int
    state: str
    operation_type: str
    program_name: str
    tool_number: int
    tool_type: str
    tool_diameter_mm: float
    tool_radius_mm: float
    pos: dict[str, float]
    speed: dict[str, float]
    util_pct: dict[str, float]
    current_a: dict[str, float]
    spindle_rpm: float
    spindle_load_pct: float
    feed_override_pct: float
    spindle_override_pct: float
    extras: dict[str, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        """Flat store/wire record; field count (less ts/kind) is >= 43."""
        rec = {
            "kind": "snapshot",
            "ts": self.ts,
            "state": self.state,
            "operation_type": self.operation_type,
            "program_name": self.program_name,
            "tool_number": self.tool_number,
            "tool_type": self.tool_type,
            "tool_diameter_mm": self.tool_diameter_mm,
            "tool_radius_mm": self.tool_radius_mm,
            "spindle_rpm": self.spindle_rpm,
            "spindle_load_pct": self.spindle_load_pct,
            "feed_override_pct": self.feed_override_pct,
            "spindle_override_pct": self.spindle_override_pct,
        }
        for a in AXES:
            rec[f"{a}_pos"] = self.pos[a]
            rec[f"{a}_speed"] = self.speed[a]
            rec[f"{a}_util_pct"] = self.util_pct[a]
            rec[f"{a}_current_a"] = self.current_a[a]
        rec.update(self.extras)
        return rec

    @staticmethod
    def from_record(rec: dict) -> "TelemetrySnapshot":
        return TelemetrySnapshot(
            ts=rec["ts"],
            state=rec["state"],
            operation_type=rec["operation_type"],
            program_name=rec["program_name"],
            tool_number=rec["tool_number"],
            tool_type=rec["tool_type"],
            tool_diameter_mm=rec["tool_diameter_mm"],
            tool_radius_mm=rec["tool_radius_mm"],
            pos={a: rec[f"{a}_pos"] for a in AXES},
            speed={a: rec[f"{a}_speed"] for a in AXES},
            util_pct={a: rec[f"{a}_util_pct"] for a in AXES},
            current_a={a: rec[f"{a}_current_a"] for a in AXES},
            spindle_rpm=rec["spindle_rpm"],
            spindle_load_pct=rec["spindle_load_pct"],
            feed_override_pct=rec["feed_override_pct"],
            spindle_override_pct=rec["spindle_override_pct"],
            extras={k: rec[k] for k in EXTRA_NAMES if k in rec},
        )


_PROFILE_CACHE: dict[tuple, NominalProfile] = {}


class MillSimulator:
    """Seeded machine core.  One owner advances the clock via step()."""

    def __init__(self, config: SimConfig = SimConfig()):
        self.config = config
        self.rng = random.Random(config.seed)
        self.ts = config.start_ts_ms
        self.state = STATE_MANUAL
        self.operation = OP_MDI
        self._phase = "setup"
        self._phase_left = self.rng.uniform(20, 40)
        self._scenarios: list[AnomalyScenario] = []
        self._truth: list[GroundTruthLabel] = []
        self._part = self._new_part()
        self._pos = {
            "x": config.table_x_mm / 2, "y": config.table_y_mm / 2,
            "z": 400.0, "b": 0.0, "c": 0.0,
        }
        self._dir = {a: 1.0 for a in AXES}
        self._feed_override = 100.0
        self._spindle_override = 100.0
        self._part_count = 0
        self._program_started = self.ts
        self._coolant = 22.0
        self._ambient = 21.0
        self._lube = 100.0
        self._after_interrupt_off = False
        self._interrupt_in: float | None = None

    # -- nominal regime -----------------------------------------------------

    def _new_part(self) -> dict:
        r = self.rng
        tool_number = r.randint(1, 12)
        tool_type, diameter = TOOL_CATALOG[tool_number]
        base = r.uniform(self.config.cut_util_low, self.config.cut_util_high)
        return {
            "program": f"O{r.randint(1000, 9999)}.H",
            "tool_number": tool_number,
            "tool_type": tool_type,
            "diameter": diameter,
            "cx": r.uniform(100, self.config.table_x_mm - 100),
            "cy": r.uniform(80, self.config.table_y_mm - 80),
            "half_x": r.uniform(40, 120),
            "half_y": r.uniform(30, 90),
            "cut_z": r.uniform(20, 80),
            "safe_z": r.uniform(350, 480),
            "feed": r.uniform(600, 2500),
            "rpm": r.uniform(2500, 9000),
            "cut_s": max(30.0, r.gauss(self.config.cycle_mean_s, self.config.cycle_sd_s)),
            "base_util": base,
            "base_util_y": base * r.uniform(0.85, 1.0),
            "base_util_z": r.uniform(8, 30),
            "b_target": r.uniform(-90, 90),
            "c_target": r.uniform(0, 360),
        }

    @property
    def profile(self) -> NominalProfile:
        """Percentiles of the nominal regime for this config (seed-independent)."""
        key = (
            self.config.noise_sigma, self.config.cut_util_low, self.config.cut_util_high,
            self.config.cycle_mean_s, self.config.cycle_sd_s, self.config.off_mean_s,
            self.config.rapid_xy_mm_min, self.config.rapid_z_mm_min,
            self.config.rapid_bc_deg_min, self.config.table_x_mm,
            self.config.table_y_mm, self.config.travel_z_mm,
        )
        if key not in _PROFILE_CACHE:
            cal_cfg = SimConfig(
                seed=_CALIBRATION_SEED, tick_ms=1000,
                **{f: getattr(self.config, f) for f in (
                    "noise_sigma", "cut_util_low", "cut_util_high", "cycle_mean_s",
                    "cycle_sd_s", "idle_low_s", "idle_high_s", "p_off_after_part",
                    "off_mean_s", "p_interrupt_per_part", "rapid_xy_mm_min",
                    "rapid_z_mm_min", "rapid_bc_deg_min", "max_current_a",
                    "table_x_mm", "table_y_mm", "travel_z_mm",
                )},
            )
            sim = MillSimulator(cal_cfg)
            zs, speeds = [], {a: [] for a in AXES}
            for _ in range(_CALIBRATION_TICKS):
                s = sim.step()
                zs.append(s.pos["z"])
                for a in AXES:
                    speeds[a].append(s.speed[a])
            _PROFILE_CACHE[key] = NominalProfile(
                z_p95=_percentile(zs, 0.95),
                speed_p99={a: _percentile(v, 0.99) for a, v in speeds.items()},
                off_p95_s=self.config.off_mean_s * math.log(20.0),
            )
        return _PROFILE_CACHE[key]

    # -- scenario control ---------------------------------------------------

    def inject(self, scenario: AnomalyScenario) -> AnomalyScenario:
        """Schedule a scenario.  Returns the normalized scenario actually
        applied (ProlongedOff may be stretched so its signature can hold)."""
        if scenario.start_ts <= self.ts:
            raise SimulatorError(f"scenario window must start in the future of ts {self.ts}")
        if scenario.kind is ScenarioKind.PROLONGED_OFF:
            need = 3.0 * self.profile.off_p95_s + 5 * self.config.tick_ms / 1000.0
            if scenario.duration_s < need:
                scenario = AnomalyScenario(
                    scenario.kind, scenario.start_ts, need, scenario.intensity
                )
        for other in self._scenarios:
            if scenario.start_ts < other.end_ts and other.start_ts < scenario.end_ts:
                raise OverlapError(
                    f"scenario {scenario.kind.value} overlaps {other.kind.value}"
                )
        self._scenarios.append(scenario)
        self._scenarios.sort(key=lambda s: s.start_ts)
        self._truth.append(
            GroundTruthLabel(
                scenario.start_ts, scenario.end_ts,
                SCENARIO_CLASS[scenario.kind], scenario.kind,
            )
        )
        self._truth.sort(key=lambda t: t.start_ts)
        return scenario

    def ground_truth(self) -> list[GroundTruthLabel]:
        return list(self._truth)

    def _scenario_at(self, ts: int) -> AnomalyScenario | None:
        for s in self._scenarios:
            if s.start_ts <= ts < s.end_ts:
                return s
        return None

    # -- state machine ------------------------------------------------------

    def _set_state(self, new_state: str, operation: str) -> None:
        if new_state not in ALLOWED_TRANSITIONS[self.state]:
            raise SimulatorError(f"illegal transition {self.state} -> {new_state}")
        self.state = new_state
        self.operation = operation

    def _enter_phase(self, phase: str, duration_s: float) -> None:
        self._phase = phase
        self._phase_left = duration_s
        if phase == "setup":
            self._set_state(STATE_MANUAL, OP_MDI if self.rng.random() < 0.5 else OP_JOG)
        elif phase in ("approach", "cut", "retract"):
            self._set_state(STATE_AUTOMATIC, OP_PROGRAM_RUN)
        elif phase == "idle":
            self._set_state(STATE_AUTOMATIC, OP_IDLE)
        elif phase == "winddown":
            self._set_state(STATE_MANUAL, OP_JOG)
        elif phase == "off":
            self._set_state(STATE_OFF, OP_IDLE)
        elif phase == "interrupt":
            self._set_state(STATE_INTERRUPTED, OP_PROGRAM_RUN)

    def _advance_phase(self, dt: float) -> None:
        r = self.rng
        self._phase_left -= dt
        if self._phase_left > 0:
            return
        if self._phase == "setup":
            self._part = self._new_part()
            self._program_started = self.ts
            self._enter_phase("approach", r.uniform(3, 8))
        elif self._phase == "approach":
            self._enter_phase("cut", self._part["cut_s"])
            if r.random() < self.config.p_interrupt_per_part:
                # interrupt strikes partway through this cut
                self._interrupt_in = r.uniform(5, max(6.0, self._part["cut_s"] - 5))
            else:
                self._interrupt_in = None
        elif self._phase == "cut":
            self._enter_phase("retract", r.uniform(2, 5))
        elif self._phase == "retract":
            self._part_count += 1
            if r.random() < self.config.p_off_after_part:
                self._enter_phase("winddown", r.uniform(4, 10))
            else:
                self._enter_phase("idle", r.uniform(self.config.idle_low_s, self.config.idle_high_s))
        elif self._phase == "idle":
            self._part = self._new_part()
            self._program_started = self.ts
            self._enter_phase("approach", r.uniform(3, 8))
        elif self._phase == "winddown":
            self._enter_phase("off", r.expovariate(1.0 / self.config.off_mean_s))
        elif self._phase == "off":
            self._enter_phase("setup", r.uniform(15, 40))
        elif self._phase == "interrupt":
            if self._after_interrupt_off:
                self._after_interrupt_off = False
                self._enter_phase("off", r.expovariate(1.0 / self.config.off_mean_s))
            else:
                self._enter_phase("cut", max(5.0, self._phase_left + r.uniform(10, 30)))

    # -- synthesis ----------------------------------------------------------

    def _move(self, axis: str, speed_per_min: float, dt: float, lo: float, hi: float) -> None:
        delta = speed_per_min * dt / 60.0 * self._dir[axis]
        p = self._pos[axis] + delta
        if p < lo or p > hi:
            self._dir[axis] *= -1.0
            p = min(max(p, lo), hi)
        self._pos[axis] = p

    def step(self, dt_s: float | None = None) -> TelemetrySnapshot:
        """Advance one tick and emit a snapshot."""
        cfg = self.config
        dt = cfg.tick_ms / 1000.0 if dt_s is None else dt_s
        if dt <= 0:
            raise SimulatorError("dt must be > 0")
        self.ts = self.ts + max(1, int(round(dt * 1000)))
        r = self.rng

        # Steer the phase machine ahead of an imminent scenario window so
        # the signature holds from the window's first tick.
        preroll = self._scenario_at(self.ts + 3 * cfg.tick_ms)
        active = self._scenario_at(self.ts)
        steer = active or preroll
        if steer is not None:
            if steer.kind is ScenarioKind.PROLONGED_OFF:
                if self.state == STATE_AUTOMATIC and self._phase != "winddown":
                    self._enter_phase("winddown", dt)
                elif self.state == STATE_INTERRUPTED:
                    self._enter_phase("off", (steer.end_ts - self.ts) / 1000.0)
                elif self.state == STATE_MANUAL:
                    self._enter_phase("off", (steer.end_ts - self.ts) / 1000.0)
                elif self.state == STATE_OFF:
                    self._phase_left = max(self._phase_left, (steer.end_ts - self.ts) / 1000.0)
            else:
                # any non-Off scenario needs the machine up and cutting
                if self.state == STATE_OFF:
                    self._enter_phase("setup", dt)
                elif self.state == STATE_MANUAL:
                    self._part = self._new_part()
                    self._program_started = self.ts
                    self._enter_phase("cut", (steer.end_ts - self.ts) / 1000.0 + 5)
                elif self.state == STATE_INTERRUPTED:
                    self._enter_phase("cut", (steer.end_ts - self.ts) / 1000.0 + 5)
                elif self._phase in ("idle", "retract", "approach"):
                    self._enter_phase("cut", (steer.end_ts - self.ts) / 1000.0 + 5)
                elif self._phase == "cut":
                    self._phase_left = max(self._phase_left, (steer.end_ts - self.ts) / 1000.0 + 5)
                    self._interrupt_in = None
        else:
            self._advance_phase(dt)
            if self._phase == "cut" and self._interrupt_in is not None:
                self._interrupt_in -= dt
                if self._interrupt_in <= 0:
                    self._interrupt_in = None
                    self._after_interrupt_off = r.random() < 0.15
                    self._enter_phase("interrupt", r.uniform(20, 90))

        part = self._part
        speed = {a: 0.0 for a in AXES}
        util = {a: 0.0 for a in AXES}
        rpm = 0.0
        load = 0.0

        if self._phase == "approach":
            speed["x"] = cfg.rapid_xy_mm_min * r.uniform(0.7, 1.0)
            speed["y"] = cfg.rapid_xy_mm_min * r.uniform(0.5, 0.9)
            speed["z"] = cfg.rapid_z_mm_min * r.uniform(0.6, 1.0)
            speed["b"] = cfg.rapid_bc_deg_min * r.uniform(0.2, 0.6)
            speed["c"] = cfg.rapid_bc_deg_min * r.uniform(0.2, 0.6)
            for a in AXES:
                util[a] = max(0.0, r.uniform(8, 20))
            self._pos["z"] = max(part["cut_z"], self._pos["z"] - speed["z"] * dt / 60.0)
            self._move("x", speed["x"], dt, part["cx"] - part["half_x"], part["cx"] + part["half_x"])
            self._move("y", speed["y"], dt, part["cy"] - part["half_y"], part["cy"] + part["half_y"])
            self._pos["b"] += (part["b_target"] - self._pos["b"]) * 0.5
            self._pos["c"] += (part["c_target"] - self._pos["c"]) * 0.5
            rpm = part["rpm"] * r.uniform(0.3, 0.7)
            load = r.uniform(5, 15)
        elif self._phase == "cut":
            fo = self._feed_override / 100.0
            speed["x"] = part["feed"] * fo * r.uniform(0.6, 1.0)
            speed["y"] = part["feed"] * fo * r.uniform(0.2, 0.6)
            speed["z"] = r.uniform(0, 40)
            self._move("x", speed["x"], dt, part["cx"] - part["half_x"], part["cx"] + part["half_x"])
            self._move("y", speed["y"], dt, part["cy"] - part["half_y"], part["cy"] + part["half_y"])
            self._pos["z"] = part["cut_z"] + r.uniform(-2, 2)
            util["x"] = _clip(part["base_util"] + r.gauss(0, cfg.noise_sigma), 0, 100)
            util["y"] = _clip(part["base_util_y"] + r.gauss(0, cfg.noise_sigma), 0, 100)
            util["z"] = _clip(part["base_util_z"] + r.gauss(0, cfg.noise_sigma), 0, 100)
            util["b"] = _clip(r.uniform(3, 10), 0, 100)
            util["c"] = _clip(r.uniform(3, 10), 0, 100)
            rpm = part["rpm"] * self._spindle_override / 100.0 + r.gauss(0, 15)
            load = _clip(util["x"] * 0.9 + r.gauss(0, 3), 0, 150)
        elif self._phase == "retract":
            speed["z"] = cfg.rapid_z_mm_min * r.uniform(0.7, 1.0)
            self._pos["z"] = min(part["safe_z"], self._pos["z"] + speed["z"] * dt / 60.0)
            util["z"] = r.uniform(8, 18)
            rpm = part["rpm"] * r.uniform(0.0, 0.3)
            load = r.uniform(2, 8)
        elif self._phase == "idle":
            rpm = 0.0
            for a in AXES:
                util[a] = 0.0
        elif self._phase == "setup":
            if r.random() < 0.3:  # operator jogs an axis
                ax = r.choice(LINEAR_AXES)
                speed[ax] = r.uniform(100, 1200)
                util[ax] = r.uniform(3, 12)
        elif self._phase == "winddown":
            pass
        elif self._phase in ("off", "interrupt"):
            pass

        # rare operator override tweaks (roughly one per ten minutes while up)
        if self.state in (STATE_AUTOMATIC, STATE_MANUAL) and r.random() < dt / 600.0:
            if r.random() < 0.5:
                self._feed_override = float(r.choice((80, 90, 100, 110, 120)))
            else:
                self._spindle_override = float(r.choice((80, 90, 100, 110, 120)))

        tool_number = part["tool_number"]
        feed_override = self._feed_override
        spindle_override = self._spindle_override

        # scenario signature overlays
        if active is not None:
            k = active.kind
            i = active.intensity
            prof = self.profile
            if k is ScenarioKind.HIGH_CONSTANT_UTILIZATION:
                target = 85.0 + 10.0 * i
                for a in LINEAR_AXES:
                    util[a] = _clip(target + r.gauss(0, 0.8), 0, 200)
                load = _clip(target + r.gauss(0, 2), 0, 200)
            elif k is ScenarioKind.HIGH_UTIL_HIGH_Z:
                target = 81.0 + 8.0 * i
                for a in LINEAR_AXES:
                    util[a] = _clip(target + r.gauss(0, 3.5), 0, 200)
                self._pos["z"] = min(
                    cfg.travel_z_mm, prof.z_p95 * (1.02 + 0.06 * i)
                )
                speed["z"] = r.uniform(0, 30)
            elif k is ScenarioKind.MULTI_AXIS_HIGH_SPEED:
                for a in ("x", "y", "z", "b"):
                    speed[a] = prof.speed_p99[a] * (1.08 + 0.5 * i) * r.uniform(0.98, 1.05)
                    util[a] = _clip(55 + 25 * i + r.gauss(0, 4), 0, 200)
            elif k is ScenarioKind.PARAM_FLUCTUATION:
                period_s = max(2.0, 60.0 / (5.0 + 10.0 * i))
                phase_idx = int((self.ts - active.start_ts) / 1000.0 / period_s)
                flip = random.Random(active.start_ts * 1000003 + phase_idx * 7919 + cfg.seed)
                which = flip.randrange(3)
                if which == 0:
                    feed_override = float(flip.choice((60, 70, 80, 120, 130, 140, 150)))
                elif which == 1:
                    spindle_override = float(flip.choice((60, 70, 80, 120, 130, 140, 150)))
                else:
                    tool_number = flip.randint(1, 12)
            elif k is ScenarioKind.NOVELTY_DRIFT:
                pass  # handled below, on currents

        if self.state == STATE_OFF:
            speed = {a: 0.0 for a in AXES}
            util = {a: 0.0 for a in AXES}
            rpm = 0.0
            load = 0.0

        current = {}
        for a in AXES:
            base = util[a] / 100.0 * cfg.max_current_a
            current[a] = max(0.0, base * r.uniform(0.92, 1.08))
        if active is not None and active.kind is ScenarioKind.NOVELTY_DRIFT:
            # oscillating motor current with normal utilization
            t_s = (self.ts - active.start_ts) / 1000.0
            for j, a in enumerate(LINEAR_AXES):
                wob = 1.0 + 0.6 * active.intensity * math.sin(
                    2 * math.pi * t_s / 20.0 + j * 2.1
                )
                current[a] = max(0.0, current[a] * wob + 0.4 * active.intensity)

        tool_type, diameter = TOOL_CATALOG[tool_number]
        on = self.state != STATE_OFF

        self._coolant += 0.05 * ((26.0 if self._phase == "cut" else 22.0) - self._coolant) + r.gauss(0, 0.05)
        self._ambient += 0.01 * (21.0 - self._ambient) + r.gauss(0, 0.02)
        self._lube = max(5.0, self._lube - 0.0004 * dt if on else self._lube)
        if self._lube <= 5.0:
            self._lube = 100.0
        vib = 0.15 + util["x"] * 0.012 + abs(r.gauss(0, 0.05))
        if active is not None and active.kind is ScenarioKind.NOVELTY_DRIFT:
            vib += 0.3 * active.intensity
        power_kw = sum(current.values()) * 48.0 / 1000.0 + load * 0.11

        extras = {
            "coolant_temp_c": round(self._coolant, 3),
            "coolant_flow_lpm": round(r.uniform(18, 22) if self._phase == "cut" else 0.0, 3),
            "hydraulic_pressure_bar": round(120 + r.gauss(0, 1.5) if on else 0.0, 3),
            "ambient_temp_c": round(self._ambient, 3),
            "vibration_rms_mm_s": round(vib if on else 0.0, 3),
            "power_draw_kw": round(power_kw if on else 0.0, 3),
            "door_open": 1 if self.state == STATE_MANUAL else 0,
            "part_count": self._part_count,
            "program_runtime_s": round((self.ts - self._program_started) / 1000.0, 1) if on else 0.0,
            "lube_level_pct": round(self._lube, 2),
            "net_rx_kbps": round(r.uniform(5, 50) if on else 0.0, 2),
            "net_tx_kbps": round(r.uniform(2, 20) if on else 0.0, 2),
        }

        snap = TelemetrySnapshot(
            ts=self.ts,
            state=self.state,
            operation_type=self.operation,
            program_name=part["program"],
            tool_number=tool_number,
            tool_type=tool_type,
            tool_diameter_mm=diameter,
            tool_radius_mm=diameter / 2.0,
            pos={a: round(self._pos[a], 3) for a in AXES},
            speed={a: round(speed[a], 1) for a in AXES},
            util_pct={a: round(util[a], 2) for a in AXES},
            current_a={a: round(current[a], 3) for a in AXES},
            spindle_rpm=round(max(0.0, rpm), 1),
            spindle_load_pct=round(load, 2),
            feed_override_pct=feed_override,
            spindle_override_pct=spindle_override,
        )
        snap.extras = extras
        return snap

    def run(self, n_ticks: int) -> list[TelemetrySnapshot]:
        return [self.step() for _ in range(n_ticks)]


def _clip(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def _percentile(values: Iterable[float], q: float) -> float:
    xs = sorted(values)
    if not xs:
        raise ValueError("no values")
    pos = q * (len(xs) - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(xs) - 1)
    frac = pos - lo
    return xs[lo] * (1 - frac) + xs[hi] * frac


def load_scenario_file(path: str | Path) -> list[AnomalyScenario]:
    data = json.loads(Path(path).read_text())
    return [AnomalyScenario.from_json(d) for d in data]


def save_scenario_file(path: str | Path, scenarios: list[AnomalyScenario]) -> None:
    Path(path).write_text(json.dumps([s.to_json() for s in scenarios], indent=2))


def make_scenario_script(
    config: SimConfig,
    kinds: list[ScenarioKind],
    per_kind: int,
    first_offset_s: float = 1800.0,
    gap_s: float = 240.0,
    duration_s: float = 180.0,
    intensity: float = 1.0,
    seed: int = 7,
) -> list[AnomalyScenario]:
    """Evenly schedule per_kind scenarios of each kind, shuffled, spaced by
    gap_s, starting first_offset_s into the session."""
    r = random.Random(seed)
    order = [k for k in kinds for _ in range(per_kind)]
    r.shuffle(order)
    sim = MillSimulator(config)  # only for the profile (ProlongedOff stretch)
    off_need = 3.0 * sim.profile.off_p95_s + 10.0
    out = []
    t = config.start_ts_ms + int(first_offset_s * 1000)
    for kind in order:
        dur = off_need if kind is ScenarioKind.PROLONGED_OFF else duration_s
        out.append(AnomalyScenario(kind, t, dur, intensity))
        t += int((dur + gap_s + r.uniform(0, 60)) * 1000)
    return out


def write_truth_file(path: str | Path, labels: list[GroundTruthLabel]) -> None:
    with open(path, "w") as fh:
        for lbl in labels:
            fh.write(json.dumps(lbl.to_json(), sort_keys=True) + "\n")


def load_truth_file(path: str | Path) -> list[GroundTruthLabel]:
    out = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        d = json.loads(line)
        out.append(
            GroundTruthLabel(
                d["start_ts"], d["end_ts"],
                AnomalyClass(d["anomaly_class"]), ScenarioKind(d["kind"]),
            )
        )
    return out
