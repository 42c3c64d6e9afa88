"""Local stand-in for a chat-completions endpoint.

Serves deterministic completions so the labeling pipeline can run end to
end without model weights: tests inject per-report behaviors, and the demo
script replays a labels file with optional seeded noise.
"""
from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable

from .schema import LabelSchema, LabelVector, DEFAULT_SCHEMA
from .llm import serialize_completion


@dataclass
class StubReply:
    text: str
    http_status: int = 200


Responder = Callable[[str, str], "StubReply | str"]

_SUBJECT_RE = re.compile(r"Subject ID:\s*(\S+)")


def extract_subject_id(user_text: str) -> str:
    match = _SUBJECT_RE.search(user_text)
    return match.group(1) if match else ""


class StubChatServer:
    """Threaded HTTP server answering POST */chat/completions.

    The responder receives (report_id, user_text) and returns the raw
    completion text (or a StubReply to force an HTTP status).
    """

    def __init__(self, responder: Responder):
        self.responder = responder
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                if not self.path.endswith("/chat/completions"):
                    self.send_error(404)
                    return
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length) or b"{}")
                user_text = ""
                for message in payload.get("messages", []):
                    if message.get("role") == "user":
                        user_text = message.get("content", "")
                reply = outer.responder(extract_subject_id(user_text), user_text)
                if isinstance(reply, str):
                    reply = StubReply(text=reply)
                body = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": reply.text}}]}
                ).encode()
                self.send_response(reply.http_status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):  # silence per-request noise
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def __enter__(self) -> "StubChatServer":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._server.shutdown()
        self._server.server_close()


def vector_responder(
    vectors: dict[str, LabelVector], schema: LabelSchema | None = None
) -> Responder:
    """Responder replaying a fixed vector per report id as valid JSON."""
    schema = schema or DEFAULT_SCHEMA

    def respond(report_id: str, _user_text: str) -> str:
        vector = vectors.get(report_id)
        if vector is None:
            return "no prediction available for this subject"
        return serialize_completion(vector, report_id, schema)

    return respond
