"""TCP server exposing a MillSimulator over the telemetry protocol.

One clock thread owns the simulator and publishes each snapshot to a
single-writer/multi-reader buffer; connection handlers only read published
snapshots.  Protocol errors are answered with Error frames and the
connection stays open (the reader resynchronizes on the next magic);
network failures end the session, never the server.
"""

from __future__ import annotations

import json
import logging
import socket
import socketserver
import threading
import time
from pathlib import Path

from . import mtp
from .simulator import MillSimulator, write_truth_file

logger = logging.getLogger(__name__)


class _ResyncReader:
    """Frame reader that skips garbage up to the next magic after an error."""

    def __init__(self, sock):
        self._sock = sock
        self._buf = b""

    def read(self):
        """Returns (message, None) or (None, error); None,None on EOF."""
        while True:
            try:
                result = mtp.decode_frame(self._buf)
            except mtp.MTPDecodeError as exc:
                nxt = self._buf.find(mtp.MAGIC, 1)
                self._buf = self._buf[nxt:] if nxt >= 0 else b""
                return None, exc
            if isinstance(result, mtp.Decoded):
                self._buf = self._buf[result.consumed:]
                return result.message, None
            chunk = self._sock.recv(65536)
            if not chunk:
                return None, None
            self._buf += chunk


class _Published:
    def __init__(self):
        self.cond = threading.Condition()
        self.seq = 0
        self.snapshot = None

    def publish(self, snapshot) -> None:
        with self.cond:
            self.seq += 1
            self.snapshot = snapshot
            self.cond.notify_all()

    def wait_for(self, seq_after: int, timeout: float = 5.0):
        with self.cond:
            ok = self.cond.wait_for(lambda: self.seq > seq_after, timeout)
            return (self.seq, self.snapshot) if ok else (seq_after, None)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: SimulatorServer = self.server.owner  # type: ignore[attr-defined]
        reader = _ResyncReader(self.request)
        try:
            while not server.stopping.is_set():
                msg, err = reader.read()
                if err is not None:
                    mtp.write_frame(self.request, mtp.Error(400, str(err)))
                    continue
                if msg is None:
                    return
                if isinstance(msg, mtp.Hello):
                    mtp.write_frame(self.request, mtp.Hello("simulator"))
                elif isinstance(msg, mtp.ReadVars):
                    self._read_vars(server, msg)
                elif isinstance(msg, mtp.Subscribe):
                    self._stream(server, msg.interval_ms)
                    return
                else:
                    mtp.write_frame(self.request, mtp.Error(400, "unexpected message type"))
        except (ConnectionError, BrokenPipeError, OSError) as exc:
            logger.debug("session ended: %s", exc)

    def _read_vars(self, server: "SimulatorServer", msg: mtp.ReadVars) -> None:
        _, snapshot = server.published.wait_for(0)
        if snapshot is None:
            mtp.write_frame(self.request, mtp.Error(503, "no snapshot published yet"))
            return
        rec = snapshot.to_record()
        unknown = [n for n in msg.names if n not in rec]
        if unknown:
            mtp.write_frame(self.request, mtp.Error(404, f"unknown variable: {unknown[0]}"))
            return
        values = {n: rec[n] for n in msg.names}
        mtp.write_frame(self.request, mtp.VarValues(values, rec["ts"]))

    def _stream(self, server: "SimulatorServer", interval_ms: int) -> None:
        every = max(1, round(interval_ms / server.tick_ms))
        seen = server.published.seq
        next_due = seen + every
        while not server.stopping.is_set():
            seen, snapshot = server.published.wait_for(seen, timeout=1.0)
            if snapshot is None:
                continue
            if seen >= next_due:
                next_due = seen + every
                mtp.write_frame(self.request, mtp.Data(snapshot.to_record()))


class _TCPServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class SimulatorServer:
    """Serves one simulator on a TCP endpoint, pacing it in real time."""

    def __init__(
        self,
        sim: MillSimulator,
        host: str = "127.0.0.1",
        port: int = 0,
        truth_path: str | Path | None = None,
    ):
        self.sim = sim
        self.tick_ms = sim.config.tick_ms
        self.published = _Published()
        self.stopping = threading.Event()
        self._truth_path = truth_path
        self._tcp = _TCPServer((host, port), _Handler, bind_and_activate=True)
        self._tcp.owner = self  # type: ignore[attr-defined]
        self._threads: list[threading.Thread] = []

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def start(self) -> None:
        if self._truth_path is not None:
            write_truth_file(self._truth_path, self.sim.ground_truth())
        t1 = threading.Thread(target=self._clock, name="sim-clock", daemon=True)
        t2 = threading.Thread(target=self._tcp.serve_forever, name="sim-tcp", daemon=True)
        t1.start()
        t2.start()
        self._threads = [t1, t2]

    def _clock(self) -> None:
        period = self.tick_ms / 1000.0
        next_t = time.monotonic()
        while not self.stopping.is_set():
            snapshot = self.sim.step()
            self.published.publish(snapshot)
            next_t += period
            delay = next_t - time.monotonic()
            if delay > 0:
                self.stopping.wait(delay)
            else:
                next_t = time.monotonic()

    def stop(self) -> None:
        self.stopping.set()
        self._tcp.shutdown()
        self._tcp.server_close()
        with self.published.cond:
            self.published.cond.notify_all()
        for t in self._threads:
            t.join(timeout=2)

    def serve_forever(self) -> None:
        self.start()
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            self.stop()


def connect(host: str, port: int, timeout: float = 5.0) -> socket.socket:
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(timeout)
    return sock
