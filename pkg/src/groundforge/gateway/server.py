"""Runnable HTTP server exposing the stub backend over the real wire
protocol (POST /v1/{role}), so end-to-end runs and the review frontend can
exercise exactly what a GPU-backed deployment would speak."""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .stub import StubBackend, StubBadRequestError, StubUnavailableError
from .wire import ROLES

logger = logging.getLogger(__name__)


def _dump(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class _StubHandler(BaseHTTPRequestHandler):
    server_version = "groundforge-stub/0.1"
    protocol_version = "HTTP/1.1"
    timeout = 2  # close idle keep-alive connections promptly

    def log_message(self, fmt, *args):  # route chatter to logging, not stderr
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: dict) -> None:
        payload = _dump(body)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _error(self, status: int, code: str, message: str) -> None:
        self._send(status, {"error": {"code": code, "message": message}})

    def do_GET(self):
        if self.path == "/healthz":
            self._send(200, {"ok": True, "backend": self.server.backend.describe()})
        else:
            self._error(404, "not_found", f"no such path: {self.path}")

    def do_POST(self):
        parts = self.path.strip("/").split("/")
        if len(parts) != 2 or parts[0] != "v1" or parts[1] not in ROLES:
            self._error(404, "not_found", f"no such endpoint: {self.path}")
            return
        role = parts[1]
        try:
            length = int(self.headers.get("Content-Length", "0"))
            payload = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            self._error(400, "bad_json", "request body is not valid JSON")
            return
        try:
            self._send(200, self.server.backend.handle(role, payload))
        except StubUnavailableError as exc:
            self._error(503, "unavailable", str(exc))
        except StubBadRequestError as exc:
            self._error(400, exc.code, str(exc))


class StubServer:
    """Owns the listening socket; bind with port=0 to pick a free port."""

    def __init__(self, backend: StubBackend, host: str = "127.0.0.1", port: int = 0):
        self.backend = backend
        self._httpd = ThreadingHTTPServer((host, port), _StubHandler)
        self._httpd.backend = backend
        self._thread: "threading.Thread | None" = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def shutdown(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
