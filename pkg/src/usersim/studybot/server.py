"""Minimal HTTP front end: ``POST /respond {session_id, utterance | selected_button}``."""

from __future__ import annotations

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..dialogue import Turn
from .bot import StudyBotAdapter

logger = logging.getLogger(__name__)


def make_handler(adapter: StudyBotAdapter):
    counters: dict[str, int] = {}
    lock = threading.Lock()

    class Handler(BaseHTTPRequestHandler):
        def _send(self, status: int, payload: dict):
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self):
            if self.path.rstrip("/") != "/respond":
                self._send(404, {"error": "not found"})
                return
            try:
                length = int(self.headers.get("Content-Length", 0))
                data = json.loads(self.rfile.read(length) or b"{}")
                session_id = str(data["session_id"])
            except (ValueError, KeyError) as exc:
                self._send(400, {"error": f"bad request: {exc}"})
                return
            selected = data.get("selected_button")
            utterance = selected if selected is not None else data.get("utterance", "")
            with lock:
                index = counters.get(session_id, 0)
                counters[session_id] = index + 2
            turn = Turn(index, "user", str(utterance), selected_button=selected)
            reply = adapter.reply(session_id, turn)
            self._send(200, {"utterance": reply.utterance, "buttons": list(reply.buttons or [])})

        def log_message(self, fmt, *args):
            logger.debug("studybot http: " + fmt, *args)

    return Handler


def serve(adapter: StudyBotAdapter, host: str = "127.0.0.1", port: int = 8000) -> ThreadingHTTPServer:
    """Create (but do not start) a server; call ``serve_forever`` on the result."""
    return ThreadingHTTPServer((host, port), make_handler(adapter))
