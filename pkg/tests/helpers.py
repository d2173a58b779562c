"""Test doubles: table-driven and call-counting embedders, a scripted HTTP server."""

from __future__ import annotations

import json
import math
import threading
from fractions import Fraction
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ratatool.embed import EmbeddingVector, LocalEmbedder


class TableProvider:
    """Maps exact texts to fixed vectors; unknown texts are an error."""

    provider_id = "table"
    model_id = "fixed"

    def __init__(self, table: dict[str, tuple[float, ...]]):
        self.table = table

    def embed(self, texts):
        return [EmbeddingVector(self.table[t], self.provider_id, self.model_id) for t in texts]


class CountingProvider:
    def __init__(self, inner=None, model_id=None):
        self.inner = inner or LocalEmbedder(16)
        self.provider_id = self.inner.provider_id
        self.model_id = model_id or self.inner.model_id
        self.calls = 0
        self.texts = []

    def embed(self, texts):
        self.calls += 1
        self.texts.extend(texts)
        return [EmbeddingVector(v.values, self.provider_id, self.model_id) for v in self.inner.embed(texts)]


def naive_ranking(query_values, entries):
    """Independent oracle: exact rational dot products, sort by (-score, tool_id).

    Scores come back as the correctly rounded float of the exact value.
    """
    q = [Fraction(x) for x in query_values]
    scored = []
    for tool_id, values in entries:
        scored.append((tool_id, sum((a * Fraction(b) for a, b in zip(q, values)), Fraction(0))))
    scored.sort(key=lambda ts: (-ts[1], ts[0]))
    return [(tool_id, float(s)) for tool_id, s in scored]


def unit(values):
    n = math.sqrt(sum(v * v for v in values))
    return tuple(v / n for v in values)


class StubServer:
    """HTTP server answering from a script of (status, body) per path.

    ``script[path]`` is a list consumed in order; the last entry repeats.
    Every request is recorded as (method, path, headers, json_body_or_None).
    """

    def __init__(self, script):
        self.script = {k: list(v) for k, v in script.items()}
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def _reply(self):
                length = int(self.headers.get("Content-Length") or 0)
                raw = self.rfile.read(length) if length else b""
                body = json.loads(raw) if raw else None
                stub.requests.append((self.command, self.path, dict(self.headers), body))
                steps = stub.script.get(self.path)
                if not steps:
                    status, payload = 404, "not found"
                else:
                    status, payload = steps.pop(0) if len(steps) > 1 else steps[0]
                data = payload if isinstance(payload, bytes) else (
                    payload if isinstance(payload, str) else json.dumps(payload)).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            do_GET = _reply
            do_POST = _reply

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def url(self):
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
