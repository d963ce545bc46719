"""Collector client: subscribes to a telemetry endpoint and persists
snapshots to an append-only store, with reconnect/backoff and explicit gap
markers so downstream window features can refuse to span outages."""

from __future__ import annotations

import logging
import socket
import threading
import time
from pathlib import Path

from . import mtp
from .store import StoreError, StoreWriter

logger = logging.getLogger(__name__)


class CollectorError(Exception):
    pass


def run_collector(
    endpoint: tuple[str, int],
    interval_ms: int,
    store_path: str | Path,
    *,
    stop_event: threading.Event | None = None,
    max_records: int | None = None,
    backoff_base_s: float = 1.0,
    backoff_max_s: float = 60.0,
    client_id: str = "collector",
) -> int:
    """Collect Data snapshots into the store until stopped.

    Retries with exponential backoff on disconnect and records a gap marker;
    a store-write failure halts with a diagnostic (data loss is not silent).
    Returns the number of snapshot records written.
    """
    stop = stop_event or threading.Event()
    writer = StoreWriter(store_path)
    writer.write_meta(
        {
            "source": f"{endpoint[0]}:{endpoint[1]}",
            "start_ts": int(time.time() * 1000),
            "interval_ms": interval_ms,
        }
    )
    written = 0
    backoff = backoff_base_s
    had_session = False
    try:
        while not stop.is_set():
            try:
                sock = socket.create_connection(endpoint, timeout=5.0)
            except OSError as exc:
                logger.warning("connect to %s failed: %s; retry in %.1fs", endpoint, exc, backoff)
                if stop.wait(backoff):
                    break
                backoff = min(backoff * 2, backoff_max_s)
                continue
            try:
                sock.settimeout(max(2.0, interval_ms / 1000.0 * 5))
                mtp.write_frame(sock, mtp.Hello(client_id))
                reader = mtp.FrameReader(sock)
                hello = reader.read()
                if not isinstance(hello, mtp.Hello):
                    raise CollectorError(f"unexpected handshake reply: {hello!r}")
                mtp.write_frame(sock, mtp.Subscribe(interval_ms))
                backoff = backoff_base_s
                if had_session and writer.last_ts is not None:
                    writer.append_gap(writer.last_ts + 1)
                    writer.flush()
                had_session = True
                while not stop.is_set():
                    msg = reader.read()
                    if msg is None:
                        raise ConnectionError("server closed the stream")
                    if isinstance(msg, mtp.Data):
                        writer.append(msg.snapshot)
                        written += 1
                        if max_records is not None and written >= max_records:
                            return written
                    elif isinstance(msg, mtp.Error):
                        logger.warning("server error frame: %s %s", msg.code, msg.text)
            except StoreError:
                raise  # persistence failure is fatal, not retried
            except (ConnectionError, OSError, mtp.MTPError) as exc:
                logger.warning("session lost: %s; reconnecting in %.1fs", exc, backoff)
                if stop.wait(backoff):
                    break
                backoff = min(backoff * 2, backoff_max_s)
            finally:
                try:
                    sock.close()
                except OSError:
                    pass
        return written
    finally:
        writer.flush()
        writer.close()


def read_vars(endpoint: tuple[str, int], names: list[str], timeout: float = 5.0) -> mtp.VarValues:
    """One-shot spot read of named variables."""
    with socket.create_connection(endpoint, timeout=timeout) as sock:
        sock.settimeout(timeout)
        mtp.write_frame(sock, mtp.ReadVars(names))
        msg = mtp.FrameReader(sock).read()
    if isinstance(msg, mtp.VarValues):
        return msg
    if isinstance(msg, mtp.Error):
        raise CollectorError(f"server error {msg.code}: {msg.text}")
    raise CollectorError(f"unexpected reply: {msg!r}")
