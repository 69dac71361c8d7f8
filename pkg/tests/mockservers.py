"""Instrumented stdlib HTTP servers standing in for the external services:
TTS provider, chat judge, embedding service, and VLM inference endpoint.

Each server counts requests, tracks the peak number of concurrent
in-flight requests, and can be scripted to fail. Tests assert against
these counters to verify caching, retry budgets, resume behaviour, and
concurrency bounds.
"""

from __future__ import annotations

import io
import json
import re
import struct
import threading
import time
import wave
from email.parser import BytesParser
from email.policy import default as default_policy
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def make_wav(duration_s: float = 0.05, sample_rate: int = 16000) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(sample_rate)
        n = max(1, int(duration_s * sample_rate))
        wav.writeframes(struct.pack(f"<{n}h", *([0] * n)))
    return buf.getvalue()


class _Handler(BaseHTTPRequestHandler):
    # quiet: no per-request stderr logging
    def log_message(self, fmt, *args):
        pass

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length", 0))
        return self.rfile.read(length)

    def _send(self, status: int, payload: bytes, content_type: str):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def send_json(self, obj, status: int = 200):
        self._send(status, json.dumps(obj).encode(), "application/json")

    def do_POST(self):
        server: MockServer = self.server  # type: ignore[assignment]
        with server.lock:
            server.requests += 1
            server.in_flight += 1
            server.peak_in_flight = max(server.peak_in_flight, server.in_flight)
        try:
            if server.handler_delay:
                time.sleep(server.handler_delay)
            body = self._read_body()
            server.bodies.append((self.path, dict(self.headers), body))
            fail = False
            with server.lock:
                if server.fail_next > 0:
                    server.fail_next -= 1
                    fail = True
            if fail:
                self.send_json({"error": "scripted failure"}, status=503)
                return
            server.respond(self, body)
        finally:
            with server.lock:
                server.in_flight -= 1


class MockServer(ThreadingHTTPServer):
    """Base class; subclasses override respond()."""

    daemon_threads = True

    def __init__(self):
        super().__init__(("127.0.0.1", 0), _Handler)
        self.lock = threading.Lock()
        self.requests = 0
        self.in_flight = 0
        self.peak_in_flight = 0
        self.fail_next = 0  # 503 for this many upcoming requests
        self.handler_delay = 0.0
        self.bodies: list[tuple[str, dict, bytes]] = []
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.server_address
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def respond(self, handler: _Handler, body: bytes):
        raise NotImplementedError


class MockTTSServer(MockServer):
    """Returns a small valid WAV for any synthesis request; can be switched
    to return garbage bytes instead."""

    def __init__(self, garbage: bool = False):
        super().__init__()
        self.garbage = garbage

    def respond(self, handler, body):
        req = json.loads(body)
        if self.garbage:
            handler._send(200, b"not audio at all", "audio/wav")
            return
        handler._send(
            200, make_wav(sample_rate=int(req.get("sample_rate", 16000))), "audio/wav"
        )


class MockChatServer(MockServer):
    """Scripted judge endpoint.

    ``script`` maps a reply index (per kind) to raw completion text;
    by default it answers reasoning prompts with level 3 and structure
    prompts with pass. Reasoning and structure requests are counted
    separately by sniffing the reply-format instructions in the prompt.
    """

    def __init__(self, reasoning_levels=None, structure_pass: bool = True):
        super().__init__()
        self.reasoning_levels = list(reasoning_levels or [])
        self.structure_pass = structure_pass
        self.reasoning_calls = 0
        self.structure_calls = 0
        self.raw_reply: str | None = None  # overrides everything when set

    def respond(self, handler, body):
        req = json.loads(body)
        prompt = req["messages"][-1]["content"]
        if self.raw_reply is not None:
            handler.send_json({"content": self.raw_reply})
            return
        if "level:" in prompt:
            with self.lock:
                self.reasoning_calls += 1
                idx = self.reasoning_calls - 1
            if self.reasoning_levels:
                level = self.reasoning_levels[idx % len(self.reasoning_levels)]
            else:
                level = 3
            handler.send_json(
                {"content": f"level: {level}\nrationale: scripted verdict"}
            )
        else:
            with self.lock:
                self.structure_calls += 1
            verdict = "pass" if self.structure_pass else "fail"
            handler.send_json(
                {"content": f"verdict: {verdict}\nrationale: scripted verdict"}
            )


class MockEmbeddingServer(MockServer):
    """Deterministic embeddings; optionally a fixed per-text vector map."""

    def __init__(self, dimension: int = 8, vector_map=None):
        super().__init__()
        self.dimension = dimension
        self.vector_map = vector_map or {}

    def _vector(self, text: str):
        if text in self.vector_map:
            return self.vector_map[text]
        # stable pseudo-vector from the text hash
        seed = sum(text.encode("utf-8")) or 1
        return [((seed * (i + 3)) % 97) / 97.0 + 0.01 for i in range(self.dimension)]

    def respond(self, handler, body):
        req = json.loads(body)
        handler.send_json({"vectors": [self._vector(t) for t in req["texts"]]})


def parse_multipart(headers: dict, body: bytes) -> dict[str, bytes]:
    """Minimal multipart/form-data parser for the mock inference endpoint."""
    content_type = headers.get("Content-Type", "")
    raw = b"Content-Type: " + content_type.encode() + b"\r\n\r\n" + body
    message = BytesParser(policy=default_policy).parsebytes(raw)
    parts: dict[str, bytes] = {}
    for part in message.iter_parts():
        disposition = part.get("Content-Disposition", "")
        match = re.search(r'name="([^"]+)"', disposition)
        if match:
            payload = part.get_payload(decode=True)
            parts[match.group(1)] = payload if payload is not None else b""
    return parts


class MockInferenceServer(MockServer):
    """Echo-style VLM endpoint: prediction text derives deterministically
    from the request, or from a scripted answers map keyed by question."""

    def __init__(self, answers: dict[str, str] | None = None):
        super().__init__()
        self.answers = answers or {}
        self.parts_log: list[dict[str, bytes]] = []

    def respond(self, handler, body):
        parts = parse_multipart(dict(handler.headers), body)
        self.parts_log.append(parts)
        question = parts.get("question", b"").decode("utf-8", "replace")
        if question and question in self.answers:
            prediction = self.answers[question]
        elif question:
            prediction = f"Echo: {question}"
        else:
            audio = parts.get("audio", b"")
            prediction = f"Heard {len(audio)} bytes of audio."
        handler.send_json({"prediction": prediction})
