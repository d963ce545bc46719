"""Feature pipeline: per-axis engineered signals, rolling-window statistics,
one-hot encoding, robust (median/IQR) scaling and greedy collinearity
pruning.

The fitted FeatureSchema is immutable; transforming a snapshot yields exactly
the schema's column count, with engineered features computed before scaling
and categorical values one-hot encoded with a reserved UNSEEN slot.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import SCHEMA_VERSION
from .simulator import AXES, LINEAR_AXES

UNSEEN = "__UNSEEN__"

DEFAULT_CATEGORICALS = ("state", "operation_type", "tool_type")
EXCLUDED_COLUMNS = ("kind", "ts", "program_name")
PARAM_COLUMNS = ("feed_override_pct", "spindle_override_pct", "tool_number")


class FeatureError(Exception):
    pass


class GapInWindow(FeatureError):
    pass


class InsufficientData(FeatureError):
    pass


@dataclass(frozen=True)
class FeatureParams:
    r_max: float = 0.95
    window: int = 40
    v_nom: float = 48.0  # nominal bus voltage for the power proxy
    categoricals: tuple[str, ...] = DEFAULT_CATEGORICALS


@dataclass(frozen=True)
class DataProfile:
    """Reference percentiles estimated from training telemetry, used by the
    fast-axes window feature and by the label rules."""

    speed_p99: dict[str, float]
    z_p95: float
    off_p95_s: float

    def to_json(self) -> dict:
        return {
            "speed_p99": self.speed_p99,
            "z_p95": self.z_p95,
            "off_p95_s": self.off_p95_s,
        }

    @staticmethod
    def from_json(d: dict) -> "DataProfile":
        return DataProfile(dict(d["speed_p99"]), d["z_p95"], d["off_p95_s"])


def estimate_profile(records: Iterable[dict], default_off_p95_s: float = 600.0) -> DataProfile:
    """Estimate nominal percentiles from a telemetry stream (snapshots only)."""
    speeds: dict[str, list[float]] = {a: [] for a in AXES}
    zs: list[float] = []
    off_spans: list[float] = []
    off_started: int | None = None
    prev_ts: int | None = None
    for rec in records:
        if rec.get("kind") != "snapshot":
            continue
        for a in AXES:
            speeds[a].append(rec[f"{a}_speed"])
        zs.append(rec["z_pos"])
        if rec["state"] == "Off":
            if off_started is None:
                off_started = rec["ts"]
        else:
            if off_started is not None and prev_ts is not None:
                off_spans.append((prev_ts - off_started) / 1000.0)
            off_started = None
        prev_ts = rec["ts"]
    if not zs:
        raise InsufficientData("no snapshots to profile")
    off_p95 = float(np.percentile(off_spans, 95)) if len(off_spans) >= 3 else default_off_p95_s
    return DataProfile(
        speed_p99={a: float(np.percentile(v, 99)) for a, v in speeds.items()},
        z_p95=float(np.percentile(zs, 95)),
        off_p95_s=max(off_p95, 1.0),
    )


def engineer(
    snapshot: dict,
    recent_window: list[dict],
    profile: DataProfile,
    v_nom: float = 48.0,
    state_since_ts: int | None = None,
) -> dict[str, float]:
    """Derived features for one snapshot given its trailing window.

    ``recent_window`` must end with ``snapshot`` and span no gap markers.
    ``state_since_ts`` extends the state-duration clock beyond the window
    when the caller tracks it across the session.
    """
    if any(r.get("kind") == "gap" for r in recent_window):
        raise GapInWindow("window spans a gap marker")
    if not recent_window or recent_window[-1]["ts"] != snapshot["ts"]:
        raise FeatureError("recent_window must end at the snapshot")

    out: dict[str, float] = {}
    for a in LINEAR_AXES:
        out[f"usage_{a}"] = snapshot[f"{a}_util_pct"]
        out[f"intensity_{a}"] = snapshot[f"{a}_current_a"]
        out[f"speed_{a}"] = abs(snapshot[f"{a}_speed"])
        out[f"power_{a}"] = snapshot[f"{a}_current_a"] * v_nom

    for a in LINEAR_AXES:
        vals = [r[f"{a}_util_pct"] for r in recent_window]
        mean = sum(vals) / len(vals)
        out[f"usage_{a}_mean_w"] = mean
        out[f"usage_{a}_std_w"] = math.sqrt(
            sum((v - mean) ** 2 for v in vals) / len(vals)
        )

    # time in the current machine state
    state = snapshot["state"]
    since = snapshot["ts"]
    for r in reversed(recent_window):
        if r["state"] != state:
            break
        since = r["ts"]
    if state_since_ts is not None:
        since = min(since, state_since_ts)
    out["state_duration_s"] = (snapshot["ts"] - since) / 1000.0

    out["simultaneous_fast_axes"] = float(
        sum(1 for a in AXES if snapshot[f"{a}_speed"] > profile.speed_p99[a])
    )

    changes = 0
    state_changes = 0
    for prev, cur in zip(recent_window, recent_window[1:]):
        changes += sum(1 for k in PARAM_COLUMNS if prev[k] != cur[k])
        state_changes += prev["state"] != cur["state"]
    span_min = max((recent_window[-1]["ts"] - recent_window[0]["ts"]) / 60_000.0, 1e-9)
    out["param_change_rate_per_min"] = changes / span_min if len(recent_window) > 1 else 0.0
    out["state_changes_w"] = float(state_changes)
    return out


@dataclass
class FeatureRow:
    """One raw (unscaled) feature map, aligned to a snapshot timestamp."""

    ts: int
    raw: dict


class FeatureBuilder:
    """Streaming featurizer: rolling window, gap handling, state clock.

    Emits one FeatureRow per snapshot once the window is warm; a gap marker
    resets the window so no emitted row ever spans a gap.
    """

    def __init__(self, params: FeatureParams, profile: DataProfile):
        self.params = params
        self.profile = profile
        self._window: deque[dict] = deque(maxlen=params.window)
        self._state: str | None = None
        self._state_since: int | None = None

    def push(self, record: dict) -> FeatureRow | None:
        if record.get("kind") == "gap":
            self._window.clear()
            self._state = None
            self._state_since = None
            return None
        if record.get("kind") != "snapshot":
            return None
        if record["state"] != self._state:
            self._state = record["state"]
            self._state_since = record["ts"]
        self._window.append(record)
        if len(self._window) < self.params.window:
            return None
        window = list(self._window)
        raw = {
            k: v for k, v in record.items()
            if k not in EXCLUDED_COLUMNS
        }
        raw.update(
            engineer(
                record, window, self.profile,
                v_nom=self.params.v_nom, state_since_ts=self._state_since,
            )
        )
        return FeatureRow(record["ts"], raw)

    def stream(self, records: Iterable[dict]) -> Iterator[FeatureRow]:
        for rec in records:
            row = self.push(rec)
            if row is not None:
                yield row


@dataclass
class FeatureSchema:
    params: FeatureParams
    profile: DataProfile
    vocab: dict[str, list[str]]               # categorical -> one-hot values
    numeric_order: list[str]                  # all numerics, incl. dropped
    stats: dict[str, tuple[float, float]]     # numeric -> (median, iqr)
    dropped: list[tuple[str, float]]          # (column, |r| that killed it)
    columns: list[str] = field(default_factory=list)  # final output order

    def __post_init__(self):
        if not self.columns:
            self.columns = self._build_columns()

    def _build_columns(self) -> list[str]:
        cols = []
        for cat in self.params.categoricals:
            for v in self.vocab[cat]:
                cols.append(f"{cat}={v}")
        gone = {c for c, _ in self.dropped}
        cols.extend(c for c in self.numeric_order if c not in gone)
        return cols

    @property
    def dim(self) -> int:
        return len(self.columns)

    def transform_raw(self, raw: dict) -> np.ndarray:
        """Scale one raw feature map into the schema's vector layout."""
        out = np.zeros(len(self.columns))
        i = 0
        for cat in self.params.categoricals:
            vocab = self.vocab[cat]
            val = str(raw.get(cat, UNSEEN))
            idx = vocab.index(val) if val in vocab else len(vocab) - 1
            out[i + idx] = 1.0
            i += len(vocab)
        gone = {c for c, _ in self.dropped}
        for name in self.numeric_order:
            if name in gone:
                continue
            med, iqr = self.stats[name]
            x = float(raw.get(name, med))
            out[i] = (x - med) / iqr if iqr > 0 else 0.0
            i += 1
        if not np.all(np.isfinite(out)):
            raise FeatureError("non-finite value in feature vector")
        return out

    def transform(self, snapshot: dict, recent_window: list[dict]) -> np.ndarray:
        """Spec surface: vectorize one snapshot given its trailing window."""
        raw = {k: v for k, v in snapshot.items() if k not in EXCLUDED_COLUMNS}
        raw.update(
            engineer(snapshot, recent_window, self.profile, v_nom=self.params.v_nom)
        )
        return self.transform_raw(raw)

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "feature_schema",
            "params": {
                "r_max": self.params.r_max,
                "window": self.params.window,
                "v_nom": self.params.v_nom,
                "categoricals": list(self.params.categoricals),
            },
            "profile": self.profile.to_json(),
            "vocab": self.vocab,
            "numeric_order": self.numeric_order,
            "stats": {k: list(v) for k, v in self.stats.items()},
            "dropped": [list(d) for d in self.dropped],
            "columns": self.columns,
        }

    @staticmethod
    def from_json(d: dict) -> "FeatureSchema":
        p = d["params"]
        return FeatureSchema(
            params=FeatureParams(
                r_max=p["r_max"], window=p["window"], v_nom=p["v_nom"],
                categoricals=tuple(p["categoricals"]),
            ),
            profile=DataProfile.from_json(d["profile"]),
            vocab={k: list(v) for k, v in d["vocab"].items()},
            numeric_order=list(d["numeric_order"]),
            stats={k: (v[0], v[1]) for k, v in d["stats"].items()},
            dropped=[(c, r) for c, r in d["dropped"]],
            columns=list(d["columns"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "FeatureSchema":
        return FeatureSchema.from_json(json.loads(Path(path).read_text()))


def _abs_corr(matrix: np.ndarray) -> np.ndarray:
    """Pairwise |Pearson r| with zero-variance columns treated as inert."""
    x = matrix - matrix.mean(axis=0)
    std = x.std(axis=0)
    safe = np.where(std > 1e-12, std, 1.0)
    x = x / safe
    r = np.abs(x.T @ x / len(matrix))
    r[std <= 1e-12, :] = 0.0
    r[:, std <= 1e-12] = 0.0
    np.fill_diagonal(r, 0.0)
    return r


def fit_schema(rows: list[FeatureRow], params: FeatureParams = FeatureParams(),
               profile: DataProfile | None = None) -> FeatureSchema:
    """Fit vocabularies, robust statistics and the pruned column set.

    Greedy pruning: repeatedly drop the column with the most partners whose
    |r| exceeds r_max (ties drop the later column in schema order) until no
    pair exceeds the threshold.
    """
    if len(rows) < 100:
        raise InsufficientData(f"need >= 100 rows to fit a schema, got {len(rows)}")
    if profile is None:
        raise FeatureError("fit_schema needs the data profile used by the builder")

    vocab: dict[str, list[str]] = {}
    for cat in params.categoricals:
        seen = sorted({str(r.raw.get(cat)) for r in rows})
        vocab[cat] = seen + [UNSEEN]

    numeric_order = sorted(
        k for k, v in rows[0].raw.items()
        if k not in params.categoricals and isinstance(v, (int, float))
    )
    matrix = np.array(
        [[float(r.raw.get(k, 0.0)) for k in numeric_order] for r in rows]
    )

    stats: dict[str, tuple[float, float]] = {}
    scaled = np.zeros_like(matrix)
    for j, name in enumerate(numeric_order):
        col = matrix[:, j]
        med = float(np.median(col))
        iqr = float(np.percentile(col, 75) - np.percentile(col, 25))
        stats[name] = (med, iqr)
        scaled[:, j] = (col - med) / iqr if iqr > 0 else 0.0

    r = _abs_corr(scaled)
    alive = np.ones(len(numeric_order), dtype=bool)
    dropped: list[tuple[str, float]] = []
    while True:
        over = (r > params.r_max) & alive[:, None] & alive[None, :]
        counts = over.sum(axis=1)
        if counts.max(initial=0) == 0:
            break
        worst = counts.max()
        candidates = np.flatnonzero(counts == worst)
        victim = int(candidates.max())  # ties: drop the later column
        dropped.append((numeric_order[victim], float(r[victim].max())))
        alive[victim] = False
        r[victim, :] = 0.0
        r[:, victim] = 0.0

    return FeatureSchema(
        params=params,
        profile=profile,
        vocab=vocab,
        numeric_order=numeric_order,
        stats=stats,
        dropped=dropped,
    )


def fit_from_records(
    records: Iterable[dict], params: FeatureParams = FeatureParams()
) -> tuple[FeatureSchema, list[FeatureRow]]:
    """Profile + featurize + fit in one pass over training telemetry."""
    records = list(records)
    profile = estimate_profile(records)
    rows = list(FeatureBuilder(params, profile).stream(records))
    return fit_schema(rows, params, profile), rows
