"""Stateless HTTP service answering the prediction wire protocol with the
surrogate model. One thread per request; the only shared state is the
read-only surrogate configuration."""
from __future__ import annotations

import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import protocol
from .predictor import SurrogateConfig, SurrogatePredictor

logger = logging.getLogger(__name__)

MAX_BODY = 64 * 1024 * 1024


def parse_bind(bind: str) -> tuple[str, int]:
    host, sep, port = bind.rpartition(":")
    if not sep:
        host, port = "127.0.0.1", bind
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"bad bind address {bind!r}, expected HOST:PORT") from None


class _Handler(BaseHTTPRequestHandler):
    server_version = "amss-predictor/1"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)

    def _send(self, status: int, body: bytes, content_type: str = "application/json"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str):
        self._send(status, protocol.canonical_json({"error": message}))

    def do_GET(self):
        if self.path == protocol.HEALTH_PATH:
            self._send(200, b"ok", "text/plain; charset=utf-8")
        else:
            self._error(404, f"unknown route {self.path}")

    def do_POST(self):
        if self.path != protocol.PREDICT_PATH:
            # drain the body so keep-alive connections stay in sync
            self.rfile.read(int(self.headers.get("Content-Length") or 0))
            self._error(404, f"unknown route {self.path}")
            return
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            self.close_connection = True
            self._error(413, "request body too large")
            return
        body = self.rfile.read(length)
        try:
            ambient, candidates = protocol.decode_request(body)
        except protocol.ProtocolError as exc:
            self._error(400, str(exc))
            return
        prediction = self.server.predictor.predict(ambient, candidates)
        self._send(200, protocol.encode_response(prediction, candidates))


class PredictionServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, config: SurrogateConfig | None = None):
        super().__init__(address, _Handler)
        self.predictor = SurrogatePredictor(config)

    @property
    def url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def start_background(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, name="amss-predictor", daemon=True)
        t.start()
        return t

    def stop(self):
        self.shutdown()
        self.server_close()


def make_server(bind: str = "127.0.0.1:8765", config: SurrogateConfig | None = None) -> PredictionServer:
    return PredictionServer(parse_bind(bind), config)


def serve(bind: str = "127.0.0.1:8765", config: SurrogateConfig | None = None) -> None:
    """Serve until interrupted."""
    server = make_server(bind, config)
    logger.info("serving surrogate predictor on %s", server.url)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
