"""HTTP surface of the service: JSON resources, alert actions, config
get/put with alert-policy hot reload, and a server-push event stream.

Read endpoints are safe and idempotent; alert actions are idempotent per
(alert id, action).  A slow stream consumer only drops its own events
(bounded queue, drop-oldest), never stalls the pipeline.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from . import SCHEMA_VERSION
from .alerts import AlertError, IllegalTransition, UnknownAlert
from .config import ConfigError, PipelineConfig, hot_reloadable_diff, parse_config
from .pipeline import LivePipeline
from .store import InvalidRange, StoreReader, TimeRangeQuery, dumps_canonical

logger = logging.getLogger(__name__)

ALERT_ACTION_RE = re.compile(r"^/api/v1/alerts/(\d+)/(ack|validate|dismiss|relabel)$")

STATUS_TARGET = {"ack": "Acknowledged", "validate": "Validated", "dismiss": "Dismissed"}

MIME = {
    ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
    ".map": "application/json", ".svg": "image/svg+xml", ".png": "image/png",
    ".ico": "image/x-icon",
}


class _QuietHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def handle_error(self, request, client_address):
        # client hangups on long-lived streams are routine, not errors
        import sys

        exc = sys.exc_info()[1]
        if isinstance(exc, (BrokenPipeError, ConnectionResetError, TimeoutError)):
            return
        logger.exception("api request from %s failed", client_address)


class ApiServer:
    def __init__(
        self,
        pipeline: LivePipeline,
        config: PipelineConfig,
        telemetry_store: str | Path | None = None,
        host: str = "127.0.0.1",
        port: int = 0,
        static_dir: str | Path | None = None,
        expert_labels_path: str | Path | None = None,
    ):
        self.pipeline = pipeline
        self.config = config
        self.telemetry_store = telemetry_store
        self.static_dir = Path(static_dir) if static_dir else None
        self.expert_label_sink: list[dict] = []
        self.expert_labels_path = Path(expert_labels_path) if expert_labels_path else None
        self._config_lock = threading.Lock()
        handler = _make_handler(self)
        self._httpd = _QuietHTTPServer((host, port), handler)
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name="api-http", daemon=True
        )
        self._thread.start()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=3)

    # -- config hot reload ----------------------------------------------------

    def put_config(self, body: dict) -> tuple[int, dict]:
        with self._config_lock:
            try:
                candidate = parse_config(body)
            except ConfigError as exc:
                return 400, {"error": str(exc)}
            frozen = hot_reloadable_diff(self.config, candidate)
            if frozen:
                return 400, {
                    "error": f"key {frozen[0]!r} is not hot-reloadable; "
                    "only alert_policy and cause_matrix may change at runtime"
                }
            self.config = candidate
            engine = self.pipeline.engine.alert_engine
            engine.policy = candidate.alert_policy
            engine.cause_matrix = candidate.cause_matrix
            return 200, {"applied": ["alert_policy", "cause_matrix"]}


def _make_handler(server: ApiServer):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            logger.debug("api: " + fmt, *args)

        # -- plumbing ---------------------------------------------------------

        def _send_json(self, code: int, payload) -> None:
            body = json.dumps({"schema_version": SCHEMA_VERSION, **payload}).encode()
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(body)

        def _query(self) -> dict:
            return {k: v[0] for k, v in parse_qs(urlparse(self.path).query).items()}

        def _body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length == 0:
                return {}
            try:
                return json.loads(self.rfile.read(length))
            except json.JSONDecodeError:
                return {}

        # -- GET ---------------------------------------------------------------

        def do_GET(self):  # noqa: N802
            path = urlparse(self.path).path
            try:
                if path == "/api/v1/state":
                    return self._get_state()
                if path == "/api/v1/telemetry":
                    return self._get_telemetry()
                if path == "/api/v1/anomalies":
                    return self._get_anomalies()
                if path == "/api/v1/alerts":
                    return self._get_alerts()
                if path == "/api/v1/forecast/latest":
                    return self._get_forecast()
                if path == "/api/v1/config":
                    return self._send_json(200, {"config": server.config.to_json()})
                if path == "/api/v1/status":
                    return self._send_json(200, {"status": server.pipeline.status()})
                if path == "/api/v1/stream":
                    return self._stream()
                return self._static(path)
            except InvalidRange as exc:
                return self._send_json(400, {"error": str(exc)})
            except BrokenPipeError:
                pass
            except Exception as exc:  # surface, don't kill the thread
                logger.exception("api error")
                return self._send_json(500, {"error": str(exc)})

        def _get_state(self):
            snap = server.pipeline.latest_snapshot
            if snap is None:
                return self._send_json(200, {"machine_state": None, "snapshot": None})
            return self._send_json(
                200, {"machine_state": snap.get("state"), "snapshot": snap}
            )

        def _get_telemetry(self):
            if server.telemetry_store is None:
                return self._send_json(404, {"error": "no telemetry store configured"})
            q = self._query()
            try:
                trq = TimeRangeQuery(
                    from_ts=int(q["from"]),
                    to_ts=int(q["to"]),
                    vars=q["vars"].split(",") if "vars" in q else None,
                    state=q.get("state"),
                )
            except (KeyError, ValueError) as exc:
                return self._send_json(400, {"error": f"bad range parameters: {exc}"})
            records = StoreReader(server.telemetry_store).query(trq)
            return self._send_json(200, {"records": records, "count": len(records)})

        def _get_anomalies(self):
            q = self._query()
            rows = list(server.pipeline.engine.anomaly_events)
            try:
                if "from" in q:
                    rows = [r for r in rows if r["ts"] >= int(q["from"])]
                if "to" in q:
                    rows = [r for r in rows if r["ts"] < int(q["to"])]
                if "min_certainty" in q:
                    rows = [r for r in rows if r["certainty"] >= float(q["min_certainty"])]
            except ValueError as exc:
                return self._send_json(400, {"error": f"bad filter: {exc}"})
            if "class" in q:
                rows = [r for r in rows if r["anomaly_class"] == q["class"]]
            return self._send_json(200, {"anomalies": rows, "count": len(rows)})

        def _get_alerts(self):
            q = self._query()
            alerts = [
                a.to_json()
                for _, a in sorted(server.pipeline.engine.alert_engine.alerts.items())
            ]
            if "status" in q:
                alerts = [a for a in alerts if a["status"] == q["status"]]
            if "class" in q:
                alerts = [a for a in alerts if a["anomaly_class"] == q["class"]]
            return self._send_json(200, {"alerts": alerts, "count": len(alerts)})

        def _get_forecast(self):
            fs = server.pipeline.latest_forecast
            if fs is None:
                return self._send_json(404, {"error": "no forecast computed yet"})
            return self._send_json(200, {"forecast": fs.to_json()})

        def _stream(self):
            sub = server.pipeline.subscribe()
            try:
                self.send_response(200)
                self.send_header("Content-Type", "text/event-stream")
                self.send_header("Cache-Control", "no-cache")
                self.send_header("Access-Control-Allow-Origin", "*")
                self.end_headers()
                while not server.pipeline.stopping.is_set():
                    event = sub.get(timeout=1.0)
                    if event is None:
                        self.wfile.write(b": keepalive\n\n")
                        self.wfile.flush()
                        continue
                    data = dumps_canonical(event)
                    self.wfile.write(f"data: {data}\n\n".encode())
                    self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                pass
            finally:
                server.pipeline.unsubscribe(sub)

        def _static(self, path: str):
            if server.static_dir is None:
                if path in ("/", "/index.html"):
                    return self._send_json(200, {"service": "detecta", "api": "/api/v1"})
                return self._send_json(404, {"error": f"no route {path}"})
            rel = "index.html" if path == "/" else path.lstrip("/")
            target = (server.static_dir / rel).resolve()
            if not str(target).startswith(str(server.static_dir.resolve())) or not target.is_file():
                return self._send_json(404, {"error": f"no route {path}"})
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", MIME.get(target.suffix, "application/octet-stream"))
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        # -- POST / PUT -----------------------------------------------------------

        def do_POST(self):  # noqa: N802
            path = urlparse(self.path).path
            m = ALERT_ACTION_RE.match(path)
            if not m:
                return self._send_json(404, {"error": f"no route {path}"})
            alert_id = int(m.group(1))
            action = m.group(2)
            body = self._body()
            actor = body.get("actor", "operator")
            ts = int(body.get("ts") or 0)
            engine = server.pipeline.engine.alert_engine
            alert = engine.alerts.get(alert_id)
            if alert is None:
                return self._send_json(404, {"error": f"unknown alert {alert_id}"})
            if action in STATUS_TARGET and alert.status == STATUS_TARGET[action]:
                return self._send_json(200, {"alert": alert.to_json(), "idempotent": True})
            if action == "relabel" and alert.expert_relabel is not None and (
                alert.expert_relabel.value == body.get("class")
            ):
                return self._send_json(200, {"alert": alert.to_json(), "idempotent": True})
            try:
                alert, label = engine.transition(
                    alert_id, action, actor, ts, relabel_class=body.get("class")
                )
            except IllegalTransition as exc:
                return self._send_json(409, {"error": str(exc)})
            except UnknownAlert as exc:
                return self._send_json(404, {"error": str(exc)})
            except AlertError as exc:
                return self._send_json(400, {"error": str(exc)})
            if label is not None:
                server.expert_label_sink.append(label)
                if server.expert_labels_path is not None:
                    server.expert_labels_path.parent.mkdir(parents=True, exist_ok=True)
                    with open(server.expert_labels_path, "a") as fh:
                        fh.write(dumps_canonical(label) + "\n")
            return self._send_json(200, {"alert": alert.to_json(), "expert_label": label})

        def do_PUT(self):  # noqa: N802
            path = urlparse(self.path).path
            if path != "/api/v1/config":
                return self._send_json(404, {"error": f"no route {path}"})
            code, payload = server.put_config(self._body())
            return self._send_json(code, payload)

    return Handler
