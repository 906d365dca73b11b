"""HTTP server exposing the built-in mock backends on the native wire protocol.

Routes: POST /embed, /rerank, /generate and GET /health. Serves the fixed
model ids mock-embed / mock-rerank / mock-generate; anything else is a 404
with an error body, matching the behavior expected of real model servers so
one protocol conformance suite covers both.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .backends import mock_embedding, mock_generate, mock_rerank_scores

MODELS = {"embed": "mock-embed", "rerank": "mock-rerank", "generate": "mock-generate"}


class MockHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, payload: dict) -> None:
        body = json.dumps(payload, ensure_ascii=False).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/health":
            self._send(200, {"status": "ok", "models": sorted(MODELS.values())})
        else:
            self._send(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        try:
            length = int(self.headers.get("Content-Length") or 0)
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(payload, dict):
                raise ValueError("request body must be a JSON object")
        except (ValueError, json.JSONDecodeError) as e:
            self._send(400, {"error": f"malformed request body: {e}"})
            return

        route = self.path.rstrip("/")
        if route not in ("/embed", "/rerank", "/generate"):
            self._send(404, {"error": f"unknown path {self.path}"})
            return
        expected_model = MODELS[route.lstrip("/")]
        if payload.get("model") != expected_model:
            self._send(404, {"error": "unknown model"})
            return

        try:
            if route == "/embed":
                texts = payload.get("texts")
                if not isinstance(texts, list) or not texts or any(
                    not isinstance(t, str) for t in texts
                ):
                    raise ValueError("'texts' must be a non-empty list of strings")
                vectors = [[float(x) for x in mock_embedding(t)] for t in texts]
                self._send(200, {"vectors": vectors})
            elif route == "/rerank":
                query = payload.get("query")
                documents = payload.get("documents")
                if not isinstance(query, str):
                    raise ValueError("'query' must be a string")
                if not isinstance(documents, list) or not documents or any(
                    not isinstance(d, str) for d in documents
                ):
                    raise ValueError("'documents' must be a non-empty list of strings")
                self._send(200, {"scores": mock_rerank_scores(query, documents)})
            else:
                prompt = payload.get("prompt")
                if not isinstance(prompt, str):
                    raise ValueError("'prompt' must be a string")
                max_tokens = payload.get("max_tokens")
                if max_tokens is not None:
                    max_tokens = int(max_tokens)
                self._send(200, {"text": mock_generate(prompt, max_tokens)})
        except ValueError as e:
            self._send(400, {"error": str(e)})


def make_server(host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), MockHandler)
    server.daemon_threads = True
    return server


def start_in_thread(host: str = "127.0.0.1", port: int = 0) -> tuple[ThreadingHTTPServer, str]:
    """Start on a free port in a daemon thread; returns (server, base_url)."""
    server = make_server(host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server, f"http://{server.server_address[0]}:{server.server_address[1]}"


def serve_forever(host: str, port: int) -> None:
    server = make_server(host, port)
    print(f"mock backends listening on http://{host}:{port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
