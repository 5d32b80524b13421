"""HTTP admin API over one :class:`~datax.platform.Platform`.

Routes (JSON in/out except POST /apply which takes manifest YAML):

    POST   /apply                      apply a multi-document manifest
    GET    /{kind}s[/{name}]           list or fetch one resource
    DELETE /{kind}s/{name}             delete with registry refusal semantics
    GET    /describe/{name}            cross-kind detail view
    GET    /streams/{name}/metrics     per-instance and total counters
    GET    /instances[/{id}[/metrics|/health|/logs]]
    GET    /nodes | POST /nodes | PUT /nodes/{id}
    GET    /conditions                 current unschedulable conditions
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Optional
from urllib.parse import urlparse

from datax.errors import (
    DataXError,
    DuplicateName,
    HasDependents,
    IncompatibleUpgrade,
    InUse,
    ManifestError,
    NotFound,
    SubjectBusy,
)
from datax.platform import Platform

log = logging.getLogger("datax.server")

_CONFLICTS = (DuplicateName, InUse, HasDependents, IncompatibleUpgrade, SubjectBusy)


def error_status(exc: Exception) -> int:
    if isinstance(exc, NotFound):
        return 404
    if isinstance(exc, _CONFLICTS):
        return 409
    if isinstance(exc, (DataXError, ValueError, ManifestError)):
        return 400
    return 500


def error_doc(exc: Exception) -> dict[str, Any]:
    details: dict[str, Any] = {}
    if isinstance(exc, DataXError):
        for key, value in exc.details.items():
            if isinstance(value, (str, int, float, bool, type(None), list, dict)):
                details[key] = value
            else:
                details[key] = str(value)
    return {
        "error": {
            "type": type(exc).__name__,
            "message": str(exc),
            "details": details,
        }
    }


class _Handler(BaseHTTPRequestHandler):
    platform: Platform  # set on the generated subclass
    protocol_version = "HTTP/1.1"

    # -- plumbing ------------------------------------------------------------

    def log_message(self, fmt: str, *args: Any) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _json(self, status: int, doc: Any) -> None:
        data = json.dumps(doc).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def _run(self, fn: Any) -> None:
        try:
            status, doc = fn()
        except Exception as exc:  # noqa: BLE001 - mapped to a status
            status = error_status(exc)
            if status == 500:
                log.exception("handler failure")
            self._json(status, error_doc(exc))
            return
        self._json(status, doc)

    @property
    def _segments(self) -> list[str]:
        return [s for s in urlparse(self.path).path.split("/") if s]

    # -- methods -------------------------------------------------------------

    def do_GET(self) -> None:  # noqa: N802 - BaseHTTPRequestHandler contract
        self._run(lambda: self._get(self._segments))

    def do_POST(self) -> None:  # noqa: N802
        self._run(lambda: self._post(self._segments, self._body()))

    def do_PUT(self) -> None:  # noqa: N802
        self._run(lambda: self._put(self._segments))

    def do_DELETE(self) -> None:  # noqa: N802
        self._run(lambda: self._delete(self._segments))

    # -- routing -------------------------------------------------------------

    def _get(self, seg: list[str]) -> tuple[int, Any]:
        p = self.platform
        if not seg:
            return 200, {"ok": True, "service": "datax"}
        if seg == ["healthz"]:
            return 200, {"ok": True}
        if seg == ["conditions"]:
            return 200, p.conditions_doc()
        if seg == ["nodes"]:
            return 200, p.nodes_doc()
        if seg[0] == "instances":
            if len(seg) == 1:
                return 200, p.instances_doc()
            if len(seg) == 2:
                return 200, p.instance_health(seg[1])
            if len(seg) == 3 and seg[2] == "metrics":
                return 200, p.instance_metrics(seg[1])
            if len(seg) == 3 and seg[2] == "health":
                return 200, p.instance_health(seg[1])
            if len(seg) == 3 and seg[2] == "logs":
                return 200, p.instance_logs(seg[1])
            raise NotFound("route", self.path)
        if seg[0] == "describe" and len(seg) == 2:
            return 200, p.describe(seg[1])
        if seg[0] == "streams" and len(seg) == 3 and seg[2] == "metrics":
            return 200, p.stream_metrics(seg[1])
        if len(seg) == 1:
            return 200, p.resource_list(seg[0])
        if len(seg) == 2:
            return 200, p.resource_get(seg[0], seg[1])
        raise NotFound("route", self.path)

    def _post(self, seg: list[str], body: bytes) -> tuple[int, Any]:
        p = self.platform
        if seg == ["apply"]:
            report = p.apply_text(body.decode("utf-8"))
            return 200, report
        if seg == ["nodes"]:
            doc = json.loads(body.decode("utf-8") or "{}")
            p.register_node(
                str(doc["node_id"]), str(doc.get("address", "")),
                int(doc.get("capacity", 1)),
            )
            return 200, {"registered": doc["node_id"]}
        raise NotFound("route", self.path)

    def _put(self, seg: list[str]) -> tuple[int, Any]:
        if len(seg) == 2 and seg[0] == "nodes":
            try:
                self.platform.node_heartbeat(seg[1])
            except KeyError:
                raise NotFound("node", seg[1])
            return 200, {"ok": True}
        raise NotFound("route", self.path)

    def _delete(self, seg: list[str]) -> tuple[int, Any]:
        if len(seg) == 2:
            self.platform.resource_delete(seg[0], seg[1])
            return 200, {"deleted": seg[1]}
        raise NotFound("route", self.path)


class ApiServer:
    """ThreadingHTTPServer wrapper bound to one platform."""

    def __init__(self, platform: Platform, host: str = "127.0.0.1", port: int = 0):
        handler = type("BoundHandler", (_Handler,), {"platform": platform})
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.host, self.port = self.httpd.server_address[:2]
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ApiServer":
        if self._thread is None:
            self._thread = threading.Thread(
                target=self.httpd.serve_forever, daemon=True, name="http-server"
            )
            self._thread.start()
        return self

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="datax-server", description="Run the platform with its HTTP API."
    )
    parser.add_argument("--data-dir", default="datax-data",
                        help="storage root (journal, databases, instance logs)")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8300)
    parser.add_argument("--tick", type=float, default=1.0,
                        help="reconcile period in seconds")
    parser.add_argument("--capacity", type=int, default=64,
                        help="instance capacity of the local node")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    platform = Platform(
        args.data_dir, tick_s=args.tick, node_capacity=args.capacity
    )
    server = ApiServer(platform, host=args.host, port=args.port)
    platform.start()
    server.start()
    print(f"listening on {server.url}", flush=True)

    done = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: done.set())
    done.wait()
    server.stop()
    platform.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
