"""In-process mock of a face-compare service, for tests and demos.

Two behaviors, composable:
  * scoring: deterministic confidence from a toy face embedder's cosine
    between the two uploaded images, mapped to [0, 100] (or a fixed
    score if configured);
  * scripted faults: a queue of canned responses (status codes or raw
    bodies) consumed before normal scoring resumes, for exercising the
    client's retry and validation paths.

Every request start is timestamped so tests can verify the client-side
rate limit against the server's own log.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass
from email.parser import BytesParser
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import torch

from .data import decode_png
from .encoders import FaceEmbedder, face_embed


@dataclass
class ScriptedResponse:
    status: int = 200
    body: bytes | None = None
    content_type: str = "application/json"


def confidence_from_cosine(cos: float) -> float:
    return max(0.0, min(100.0, (cos + 1.0) * 50.0))


class MockCompareServer:
    """Threaded HTTP server exposing POST /compare on 127.0.0.1."""

    def __init__(self, embedder: FaceEmbedder | None = None, fixed_score: float | None = None):
        if embedder is None and fixed_score is None:
            raise ValueError("need an embedder or a fixed score")
        self.embedder = embedder
        self.fixed_score = fixed_score
        self.script: list[ScriptedResponse] = []
        self.request_times: list[float] = []
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle ------------------------------------------------------------

    def start(self) -> "MockCompareServer":
        handler = _make_handler(self)
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._httpd:
            self._httpd.shutdown()
            self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self) -> "MockCompareServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def endpoint(self) -> str:
        assert self._httpd is not None, "server not started"
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    # -- behavior ------------------------------------------------------------

    def push_script(self, *responses: ScriptedResponse | int) -> None:
        """Queue canned responses; plain ints mean empty-body statuses."""
        with self._lock:
            for r in responses:
                self.script.append(
                    r if isinstance(r, ScriptedResponse) else ScriptedResponse(status=r)
                )

    def _next_scripted(self) -> ScriptedResponse | None:
        with self._lock:
            return self.script.pop(0) if self.script else None

    def _score(self, a_bytes: bytes, b_bytes: bytes) -> float:
        if self.fixed_score is not None:
            return self.fixed_score
        a, b = decode_png(a_bytes), decode_png(b_bytes)
        with torch.no_grad():
            ea, eb = face_embed(self.embedder, a), face_embed(self.embedder, b)
            cos = float((ea * eb).sum() / (ea.norm() * eb.norm()))
        return confidence_from_cosine(cos)


def _parse_multipart(content_type: str, body: bytes) -> dict[str, bytes]:
    msg = BytesParser().parsebytes(
        f"Content-Type: {content_type}\r\n\r\n".encode() + body
    )
    parts = {}
    if msg.is_multipart():
        for part in msg.get_payload():
            name = part.get_param("name", header="Content-Disposition")
            if name:
                parts[name] = part.get_payload(decode=True)
    return parts


def _make_handler(server: MockCompareServer):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):  # keep test output quiet
            pass

        def _send(self, status: int, body: bytes, content_type: str) -> None:
            self.send_response(status)
            self.send_header("Content-Type", content_type)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            server.request_times.append(time.monotonic())
            if self.path != "/compare":
                self._send(404, b'{"error": "not found"}', "application/json")
                return
            scripted = server._next_scripted()
            if scripted is not None:
                body = scripted.body
                if body is None:
                    body = json.dumps({"error": f"scripted {scripted.status}"}).encode()
                self._send(scripted.status, body, scripted.content_type)
                return
            length = int(self.headers.get("Content-Length", 0))
            raw = self.rfile.read(length)
            parts = _parse_multipart(self.headers.get("Content-Type", ""), raw)
            if "image_a" not in parts or "image_b" not in parts:
                self._send(400, b'{"error": "missing image_a/image_b"}', "application/json")
                return
            try:
                score = server._score(parts["image_a"], parts["image_b"])
            except ValueError as exc:
                self._send(400, json.dumps({"error": str(exc)}).encode(), "application/json")
                return
            self._send(200, json.dumps({"confidence": score}).encode(), "application/json")

    return Handler
