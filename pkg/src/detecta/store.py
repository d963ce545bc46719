"""Append-only NDJSON segment store for telemetry and alert records.

A store is a directory of segment files:

    store/
      meta.json            -- session metadata (endpoint, start ts, tick)
      seg-00000000.ndjson  -- records, one canonical JSON object per line
      seg-00000000.idx.json-- sidecar index for sealed segments
      seg-00000001.ndjson
      ...
      .writer.lock

Records are JSON objects with an integer ``ts`` (epoch ms) that must be
strictly increasing across the whole store.  Existing bytes are never
rewritten; a crash mid-append loses at most the final partial line, which
readers skip with a warning.  Sealed segments (all but the newest) are
immutable and carry a ``{first_ts, last_ts, count}`` sidecar used to prune
range queries; the active segment is always scanned.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator

logger = logging.getLogger(__name__)

RECORDS_PER_SEGMENT = 1 << 16

KIND_SNAPSHOT = "snapshot"
KIND_GAP = "gap"


class StoreError(Exception):
    pass


class InvalidRange(StoreError):
    pass


class NonMonotonicTimestamp(StoreError):
    pass


class StoreLocked(StoreError):
    pass


def dumps_canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass
class TimeRangeQuery:
    """Half-open range [from_ts, to_ts) with optional field projections."""

    from_ts: int
    to_ts: int
    vars: list[str] | None = None
    state: str | None = None

    def __post_init__(self):
        if self.from_ts >= self.to_ts:
            raise InvalidRange(f"from_ts {self.from_ts} must be < to_ts {self.to_ts}")


def _segment_name(idx: int) -> str:
    return f"seg-{idx:08d}.ndjson"


def _index_name(idx: int) -> str:
    return f"seg-{idx:08d}.idx.json"


def _segment_indices(root: Path) -> list[int]:
    out = []
    for p in root.glob("seg-*.ndjson"):
        try:
            out.append(int(p.stem.split("-")[1]))
        except (IndexError, ValueError):
            continue
    return sorted(out)


def _iter_segment(path: Path, is_active: bool) -> Iterator[dict]:
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        return
    for line in raw.split(b"\n"):
        if not line:
            continue
        try:
            yield json.loads(line)
        except (json.JSONDecodeError, UnicodeDecodeError):
            where = "active" if is_active else "sealed"
            logger.warning("skipping torn record in %s segment %s", where, path.name)


class StoreWriter:
    """Single appender for a store directory.

    Acquires an exclusive lock file; a second concurrent writer raises
    StoreLocked.  Locks left by dead processes are stolen with a warning.
    """

    def __init__(self, root: str | Path, records_per_segment: int = RECORDS_PER_SEGMENT):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.records_per_segment = records_per_segment
        self._lock_path = self.root / ".writer.lock"
        self._acquire_lock()
        indices = _segment_indices(self.root)
        self._seg_idx = indices[-1] if indices else 0
        self._seg_count = 0
        self._last_ts: int | None = None
        if indices:
            for rec in _iter_segment(self.root / _segment_name(self._seg_idx), True):
                self._seg_count += 1
                self._last_ts = rec.get("ts", self._last_ts)
            for prev in indices[:-1]:
                last = None
                for rec in _iter_segment(self.root / _segment_name(prev), False):
                    last = rec.get("ts", last)
                if last is not None and (self._last_ts is None or last > self._last_ts):
                    self._last_ts = last
        self._fh = open(self.root / _segment_name(self._seg_idx), "ab")

    def _acquire_lock(self) -> None:
        for _ in range(2):
            try:
                fd = os.open(self._lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                return
            except FileExistsError:
                try:
                    pid = int(self._lock_path.read_text())
                    os.kill(pid, 0)
                except (ValueError, ProcessLookupError, FileNotFoundError):
                    logger.warning("stealing stale writer lock at %s", self._lock_path)
                    self._lock_path.unlink(missing_ok=True)
                    continue
                except PermissionError:
                    pass
                raise StoreLocked(f"store {self.root} already has a live writer")
        raise StoreLocked(f"store {self.root} lock could not be acquired")

    @property
    def last_ts(self) -> int | None:
        return self._last_ts

    def append(self, record: dict) -> None:
        ts = record.get("ts")
        if not isinstance(ts, int):
            raise StoreError("record needs an integer ts")
        if self._last_ts is not None and ts <= self._last_ts:
            raise NonMonotonicTimestamp(f"ts {ts} <= last ts {self._last_ts}")
        if self._seg_count >= self.records_per_segment:
            self._rotate()
        self._fh.write(dumps_canonical(record).encode("utf-8") + b"\n")
        self._seg_count += 1
        self._last_ts = ts

    def append_gap(self, ts: int, reason: str = "disconnect") -> None:
        self.append({"kind": KIND_GAP, "ts": ts, "reason": reason})

    def flush(self) -> None:
        self._fh.flush()

    def _seal_index(self, idx: int) -> None:
        first = last = None
        count = 0
        for rec in _iter_segment(self.root / _segment_name(idx), False):
            if first is None:
                first = rec.get("ts")
            last = rec.get("ts", last)
            count += 1
        (self.root / _index_name(idx)).write_text(
            dumps_canonical({"first_ts": first, "last_ts": last, "count": count})
        )

    def _rotate(self) -> None:
        self._fh.close()
        self._seal_index(self._seg_idx)
        self._seg_idx += 1
        self._seg_count = 0
        self._fh = open(self.root / _segment_name(self._seg_idx), "ab")

    def write_meta(self, meta: dict) -> None:
        (self.root / "meta.json").write_text(dumps_canonical(meta))

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.flush()
        self._fh.close()
        self._lock_path.unlink(missing_ok=True)

    def __enter__(self):
        return self

    def __exit__(self, *_exc):
        self.close()


class StoreReader:
    """Reader over a store directory; safe alongside one live writer."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise StoreError(f"no store at {self.root}")

    def meta(self) -> dict:
        p = self.root / "meta.json"
        return json.loads(p.read_text()) if p.exists() else {}

    def _segment_bounds(self, idx: int, is_active: bool) -> tuple[int, int] | None:
        if not is_active:
            p = self.root / _index_name(idx)
            if p.exists():
                try:
                    d = json.loads(p.read_text())
                    if d.get("first_ts") is not None:
                        return d["first_ts"], d["last_ts"]
                except (json.JSONDecodeError, KeyError):
                    pass
        return None

    def iter_records(self, from_ts: int | None = None, to_ts: int | None = None) -> Iterator[dict]:
        indices = _segment_indices(self.root)
        for i, idx in enumerate(indices):
            active = i == len(indices) - 1
            bounds = self._segment_bounds(idx, active)
            if bounds is not None:
                if from_ts is not None and bounds[1] < from_ts:
                    continue
                if to_ts is not None and bounds[0] >= to_ts:
                    continue
            for rec in _iter_segment(self.root / _segment_name(idx), active):
                ts = rec.get("ts")
                if from_ts is not None and ts < from_ts:
                    continue
                if to_ts is not None and ts >= to_ts:
                    return
                yield rec

    def count(self) -> int:
        return sum(1 for _ in self.iter_records())

    def query(self, q: TimeRangeQuery) -> list[dict]:
        """Records with from_ts <= ts < to_ts matching the filters, in ts order."""
        out = []
        for rec in self.iter_records(q.from_ts, q.to_ts):
            if q.state is not None and rec.get("state") != q.state:
                continue
            if q.vars is not None:
                keep = {"ts", "kind", *q.vars}
                rec = {k: v for k, v in rec.items() if k in keep}
            out.append(rec)
        return out


def replay(
    store: StoreReader,
    speed_factor: float,
    sink: Callable[[dict], None],
    from_ts: int | None = None,
    to_ts: int | None = None,
) -> int:
    """Re-emit records with inter-arrival times scaled by 1/speed_factor.

    ``speed_factor=math.inf`` replays as fast as possible.  Returns the
    number of records emitted.
    """
    if not speed_factor > 0:
        raise StoreError("speed_factor must be > 0")
    prev_ts = None
    n = 0
    for rec in store.iter_records(from_ts, to_ts):
        if prev_ts is not None and not math.isinf(speed_factor):
            delta_s = (rec["ts"] - prev_ts) / 1000.0 / speed_factor
            if delta_s > 0:
                time.sleep(delta_s)
        prev_ts = rec["ts"]
        sink(rec)
        n += 1
    return n


def export(
    store: StoreReader,
    fmt: str,
    out,
    from_ts: int | None = None,
    to_ts: int | None = None,
) -> int:
    """Write records to ``out`` as ndjson or csv; returns record count."""
    if fmt == "ndjson":
        n = 0
        for rec in store.iter_records(from_ts, to_ts):
            out.write(dumps_canonical(rec) + "\n")
            n += 1
        return n
    if fmt == "csv":
        import csv

        records = list(store.iter_records(from_ts, to_ts))
        cols: list[str] = []
        seen = set()
        for rec in records:
            for k in rec:
                if k not in seen:
                    seen.add(k)
                    cols.append(k)
        cols.sort()
        w = csv.DictWriter(out, fieldnames=cols)
        w.writeheader()
        for rec in records:
            w.writerow(rec)
        return len(records)
    raise StoreError(f"unknown export format {fmt!r}")
