"""Shared fixtures: a configurable local HTTP stub standing in for a large model."""

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class StubHandler(BaseHTTPRequestHandler):
    """POST handler whose behavior dict scripts the next responses."""

    behavior = {"mode": "uniform", "delay": 0.0, "status": 200, "classes": 4,
                "confidence": None}
    seen = []

    def do_POST(self):
        cfg = type(self).behavior
        type(self).seen.append({
            "body": json.loads(self.rfile.read(int(self.headers["Content-Length"]))),
            "auth": self.headers.get("Authorization"),
        })
        if cfg["delay"]:
            time.sleep(cfg["delay"])
        if cfg["status"] != 200:
            self.send_response(cfg["status"])
            self.end_headers()
            self.wfile.write(b"nope")
            return
        n = cfg["classes"]
        if cfg["mode"] == "uniform":
            payload = {"version": 1, "distribution": [1.0 / n] * n, "model_name": "stub"}
        elif cfg["mode"] == "confident":
            conf = cfg["confidence"] or 0.99
            dist = [(1.0 - conf) / (n - 1)] * n
            dist[0] = conf
            payload = {"version": 1, "distribution": dist, "model_name": "stub"}
        elif cfg["mode"] == "short_sum":
            payload = {"version": 1, "distribution": [1.0 / n] * (n - 1) + [1.0 / n - 0.1],
                       "model_name": "stub"}
        elif cfg["mode"] == "bad_version":
            payload = {"version": 99, "distribution": [1.0] + [0.0] * (n - 1)}
        else:  # wrong-length list
            payload = {"version": 1, "distribution": [0.7, 0.3], "model_name": "stub"}
        body = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    StubHandler.behavior = {"mode": "uniform", "delay": 0.0, "status": 200,
                            "classes": 4, "confidence": None}
    StubHandler.seen = []
    yield f"http://127.0.0.1:{server.server_port}/predict"
    server.shutdown()
    thread.join(timeout=2)
