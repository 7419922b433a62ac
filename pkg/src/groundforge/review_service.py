"""HTTP review service for human curation.

API (also consumed by the browser frontend):
  GET  /review/next?reviewer=...&category=...  -> {"item": ReviewItem|null, "remaining": n}
  POST /review/decision                        -> decision semantics of curation.ingest_review
  GET  /review/progress                        -> per-category/status counts

Decisions are durably appended to the audit log before they are
acknowledged; version conflicts return 409 with the current item so
clients can refresh instead of blind-retrying.
"""
from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .curation import ReviewStore
from .errors import (
    InvalidTransitionError,
    UnknownCategoryError,
    UnknownSampleError,
    VersionConflictError,
)

logger = logging.getLogger(__name__)


class _ReviewHTTPServer(ThreadingHTTPServer):
    # finish in-flight review writes before exit
    daemon_threads = False
    block_on_close = True


class _ReviewHandler(BaseHTTPRequestHandler):
    server_version = "groundforge-review/0.1"
    protocol_version = "HTTP/1.1"
    # drop idle keep-alive connections so shutdown can join handler threads
    # instead of waiting on a browser that never hangs up
    timeout = 2

    def log_message(self, fmt, *args):
        logger.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: dict) -> None:
        payload = json.dumps(body, sort_keys=True).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self._cors()
        self.end_headers()
        self.wfile.write(payload)

    def _cors(self) -> None:
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")

    def _error(self, status: int, code: str, message: str, extra: "dict | None" = None) -> None:
        body = {"error": {"code": code, "message": message}}
        if extra:
            body.update(extra)
        self._send(status, body)

    def do_OPTIONS(self):
        self.send_response(204)
        self._cors()
        self.send_header("Content-Length", "0")
        self.end_headers()

    def do_GET(self):
        url = urlparse(self.path)
        store: ReviewStore = self.server.store
        if url.path == "/review/next":
            query = parse_qs(url.query)
            category = query.get("category", [None])[0]
            reviewer = query.get("reviewer", [None])[0]
            item = store.next_pending(category=category, reviewer=reviewer)
            self._send(200, {
                "item": item.to_json() if item else None,
                "remaining": store.pending_count(category),
            })
        elif url.path == "/review/progress":
            self._send(200, store.progress())
        elif url.path == "/healthz":
            self._send(200, {"ok": True})
        else:
            self._error(404, "not_found", f"no such path: {url.path}")

    def do_POST(self):
        url = urlparse(self.path)
        if url.path != "/review/decision":
            self._error(404, "not_found", f"no such path: {url.path}")
            return
        store: ReviewStore = self.server.store
        try:
            length = int(self.headers.get("Content-Length", "0"))
            decision = json.loads(self.rfile.read(length) or b"{}")
        except (ValueError, json.JSONDecodeError):
            self._error(400, "bad_json", "request body is not valid JSON")
            return
        missing = [k for k in ("sample_id", "action", "expected_version")
                   if k not in decision]
        if missing:
            self._error(400, "missing_fields", f"decision lacks {missing}")
            return
        try:
            item = store.decide(decision)
        except VersionConflictError as exc:
            current = store.manifest.item(exc.sample_id)
            self._error(409, "version_conflict", str(exc),
                        {"item": current.to_json()})
            return
        except UnknownSampleError as exc:
            self._error(404, "unknown_sample", str(exc))
            return
        except InvalidTransitionError as exc:
            self._error(409, "invalid_transition", str(exc))
            return
        except (UnknownCategoryError, ValueError) as exc:
            self._error(400, "bad_decision", str(exc))
            return
        self._send(200, {"item": item.to_json()})


class ReviewServer:
    """Owns the socket; bind port=0 to pick a free port."""

    def __init__(self, store: ReviewStore, host: str = "127.0.0.1", port: int = 0):
        self.store = store
        self._httpd = _ReviewHTTPServer((host, port), _ReviewHandler)
        self._httpd.store = store
        self._thread: "threading.Thread | None" = None

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "ReviewServer":
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
