import io
import json
import math
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from detecta import store as st_mod
from detecta.store import (
    InvalidRange,
    NonMonotonicTimestamp,
    StoreLocked,
    StoreReader,
    StoreWriter,
    TimeRangeQuery,
    export,
    replay,
)


def write_records(root, records, per_segment=1 << 16):
    with StoreWriter(root, records_per_segment=per_segment) as w:
        for rec in records:
            w.append(rec)


def snap(ts, state="Automatic", **extra):
    return {"kind": "snapshot", "ts": ts, "state": state, **extra}


def test_append_and_read_back(tmp_path):
    recs = [snap(i * 1000, x=i) for i in range(10)]
    write_records(tmp_path / "s", recs)
    got = list(StoreReader(tmp_path / "s").iter_records())
    assert got == recs


def test_segment_rotation_and_index(tmp_path):
    recs = [snap(i) for i in range(25)]
    write_records(tmp_path / "s", recs, per_segment=10)
    root = tmp_path / "s"
    assert (root / "seg-00000000.ndjson").exists()
    assert (root / "seg-00000002.ndjson").exists()
    idx = json.loads((root / "seg-00000000.idx.json").read_text())
    assert idx == {"first_ts": 0, "last_ts": 9, "count": 10}
    assert list(StoreReader(root).iter_records()) == recs


def test_non_monotonic_ts_rejected(tmp_path):
    w = StoreWriter(tmp_path / "s")
    w.append(snap(100))
    with pytest.raises(NonMonotonicTimestamp):
        w.append(snap(100))
    w.close()


def test_writer_resumes_after_reopen(tmp_path):
    write_records(tmp_path / "s", [snap(5)])
    w = StoreWriter(tmp_path / "s")
    with pytest.raises(NonMonotonicTimestamp):
        w.append(snap(4))
    w.append(snap(6))
    w.close()
    assert [r["ts"] for r in StoreReader(tmp_path / "s").iter_records()] == [5, 6]


def test_second_writer_locked_out(tmp_path):
    w = StoreWriter(tmp_path / "s")
    with pytest.raises(StoreLocked):
        StoreWriter(tmp_path / "s")
    w.close()
    StoreWriter(tmp_path / "s").close()


def test_torn_final_record_skipped(tmp_path, caplog):
    write_records(tmp_path / "s", [snap(1), snap(2)])
    seg = tmp_path / "s" / "seg-00000000.ndjson"
    with open(seg, "ab") as fh:
        fh.write(b'{"kind":"snapshot","ts":3,"sta')  # simulated crash mid-append
    got = [r["ts"] for r in StoreReader(tmp_path / "s").iter_records()]
    assert got == [1, 2]


def test_query_range_and_filters(tmp_path):
    recs = [
        snap(0, state="Automatic", x=1.0),
        snap(1000, state="Off", x=0.0),
        {"kind": "gap", "ts": 1500, "reason": "disconnect"},
        snap(2000, state="Automatic", x=2.0),
    ]
    write_records(tmp_path / "s", recs)
    r = StoreReader(tmp_path / "s")
    assert [x["ts"] for x in r.query(TimeRangeQuery(0, 2000))] == [0, 1000, 1500]
    assert [x["ts"] for x in r.query(TimeRangeQuery(1000, 1001))] == [1000]
    off = r.query(TimeRangeQuery(0, 3000, state="Off"))
    assert [x["ts"] for x in off] == [1000]
    proj = r.query(TimeRangeQuery(0, 3000, vars=["x"]))
    assert proj[0] == {"kind": "snapshot", "ts": 0, "x": 1.0}


def test_query_state_filter_on_all_automatic_log_is_empty(tmp_path):
    write_records(tmp_path / "s", [snap(i) for i in range(5)])
    assert StoreReader(tmp_path / "s").query(TimeRangeQuery(0, 10, state="Off")) == []


def test_invalid_range():
    with pytest.raises(InvalidRange):
        TimeRangeQuery(5, 5)


@settings(max_examples=60, deadline=None)
@given(
    ts_list=st.lists(st.integers(min_value=0, max_value=300), unique=True, max_size=40),
    lo=st.integers(min_value=-10, max_value=310),
    span=st.integers(min_value=1, max_value=320),
)
def test_query_matches_linear_scan_oracle(tmp_path_factory, ts_list, lo, span):
    root = tmp_path_factory.mktemp("qs") / "s"
    recs = [snap(t) for t in sorted(ts_list)]
    write_records(root, recs, per_segment=7)
    hi = lo + span
    got = StoreReader(root).query(TimeRangeQuery(lo, hi))
    oracle = [r for r in recs if lo <= r["ts"] < hi]
    assert got == oracle


def test_replay_fast_preserves_order_and_count(tmp_path):
    recs = [snap(i * 250) for i in range(20)]
    write_records(tmp_path / "s", recs)
    seen = []
    n = replay(StoreReader(tmp_path / "s"), math.inf, seen.append)
    assert n == 20
    assert [r["ts"] for r in seen] == [r["ts"] for r in recs]


def test_replay_empty_store_clean_end(tmp_path):
    (tmp_path / "s").mkdir()
    assert replay(StoreReader(tmp_path / "s"), math.inf, lambda r: None) == 0


def test_replay_speed_scaling(tmp_path):
    # 2 s of log at 4x => ~0.5 s wall
    recs = [snap(i * 500) for i in range(5)]
    write_records(tmp_path / "s", recs)
    t0 = time.monotonic()
    replay(StoreReader(tmp_path / "s"), 4.0, lambda r: None)
    wall = time.monotonic() - t0
    assert 0.4 <= wall <= 0.8


def test_export_ndjson_and_csv(tmp_path):
    recs = [snap(0, x=1), snap(1, x=2)]
    write_records(tmp_path / "s", recs)
    buf = io.StringIO()
    assert export(StoreReader(tmp_path / "s"), "ndjson", buf) == 2
    lines = buf.getvalue().strip().split("\n")
    assert json.loads(lines[0]) == recs[0]
    buf = io.StringIO()
    assert export(StoreReader(tmp_path / "s"), "csv", buf) == 2
    assert buf.getvalue().splitlines()[0] == "kind,state,ts,x"
