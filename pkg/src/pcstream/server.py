"""HTTP origin for manifest and media with per-connection throughput shaping.

The throttle paces response bodies in 64 KiB chunks, sleeping before each
send so the last byte arrives at size/rate; a piecewise schedule switches the
active rate relative to server start time, which makes adaptation
experiments reproducible on loopback.
"""

from __future__ import annotations

import json
import logging
import posixpath
import threading
import time
from dataclasses import dataclass
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import unquote, urlparse

log = logging.getLogger(__name__)

CHUNK_SIZE = 64 * 1024

_CONTENT_TYPES = {
    ".mpd": "application/xml",
    ".ply": "application/octet-stream",
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
}


@dataclass(frozen=True)
class ServeConfig:
    """Origin configuration.

    throttle: None for unshaped, a positive bytes-per-second number, or a
    piecewise schedule [(t_seconds, bytes_per_second), ...] with strictly
    increasing times applied relative to server start (unshaped before the
    first entry).
    """

    root: Path
    host: str = "127.0.0.1"
    port: int = 0
    throttle: float | list[tuple[float, float]] | None = None
    log_path: Path | None = None
    viewer_dir: Path | None = None

    def __post_init__(self) -> None:
        if self.throttle is None:
            return
        if isinstance(self.throttle, (int, float)):
            if not (self.throttle > 0):
                raise ValueError("throttle rate must be positive")
            return
        last_t = None
        for t, bps in self.throttle:
            if not (bps > 0):
                raise ValueError("throttle rates must be positive")
            if last_t is not None and t <= last_t:
                raise ValueError("schedule times must be strictly increasing")
            last_t = t

    def rate_at(self, elapsed: float) -> float | None:
        """Active bytes-per-second cap after `elapsed` seconds, or None."""
        if self.throttle is None:
            return None
        if isinstance(self.throttle, (int, float)):
            return float(self.throttle)
        active = None
        for t, bps in self.throttle:
            if elapsed >= t:
                active = float(bps)
            else:
                break
        return active


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "pcstream"

    # set by PointCloudServer
    config: ServeConfig
    started_at: float
    access_log: "AccessLog"

    def do_GET(self) -> None:
        self._serve(head_only=False)

    def do_HEAD(self) -> None:
        self._serve(head_only=True)

    def _resolve_path(self) -> Path | None:
        raw = urlparse(self.path).path
        parts = [p for p in unquote(raw).split("/") if p]
        clean = posixpath.normpath("/" + "/".join(parts))
        if clean.startswith("/viewer") and self.config.viewer_dir is not None:
            rel = clean[len("/viewer"):].lstrip("/") or "index.html"
            base = Path(self.config.viewer_dir)
        else:
            rel = clean.lstrip("/")
            base = Path(self.config.root)
        candidate = (base / rel).resolve()
        try:
            candidate.relative_to(base.resolve())
        except ValueError:
            return None  # path escapes the root
        return candidate

    def _parse_range(self, size: int) -> tuple[int, int] | None | str:
        """Returns (start, end) inclusive, None when absent/ignored, or
        "bad" for an unsatisfiable range."""
        header = self.headers.get("Range")
        if header is None:
            return None
        units, _, spec = header.partition("=")
        if units.strip() != "bytes" or "," in spec:
            return None  # multi-range or foreign units: serve full content
        start_s, dash, end_s = spec.strip().partition("-")
        if not dash:
            return None
        try:
            if start_s == "":
                # suffix form: last N bytes
                n = int(end_s)
                if n <= 0:
                    return "bad"
                return max(0, size - n), size - 1
            start = int(start_s)
            end = int(end_s) if end_s else size - 1
        except ValueError:
            return None
        if start >= size or end < start:
            return "bad"
        return start, min(end, size - 1)

    def _serve(self, head_only: bool) -> None:
        t0 = time.perf_counter()
        path = self._resolve_path()
        if path is None or not path.is_file():
            self._error(HTTPStatus.NOT_FOUND, t0)
            return
        size = path.stat().st_size
        rng = self._parse_range(size)
        if rng == "bad":
            self.send_response(HTTPStatus.REQUESTED_RANGE_NOT_SATISFIABLE)
            self.send_header("Content-Range", f"bytes */{size}")
            self.send_header("Content-Length", "0")
            self.end_headers()
            self._log(HTTPStatus.REQUESTED_RANGE_NOT_SATISFIABLE, 0, t0)
            return
        if rng is None:
            start, end = 0, size - 1
            self.send_response(HTTPStatus.OK)
        else:
            start, end = rng
            self.send_response(HTTPStatus.PARTIAL_CONTENT)
            self.send_header("Content-Range", f"bytes {start}-{end}/{size}")
        length = end - start + 1
        ctype = _CONTENT_TYPES.get(path.suffix.lower(),
                                   "application/octet-stream")
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(length))
        self.send_header("Accept-Ranges", "bytes")
        self.end_headers()
        if head_only:
            self._log(HTTPStatus.OK, 0, t0)
            return
        sent = 0
        try:
            with open(path, "rb") as f:
                f.seek(start)
                self._send_paced(f, length)
                sent = length
        except (BrokenPipeError, ConnectionResetError):
            pass
        status = HTTPStatus.OK if rng is None else HTTPStatus.PARTIAL_CONTENT
        self._log(status, sent, t0)

    def _send_paced(self, f, length: int) -> None:
        """Send `length` bytes, sleeping before each chunk so the cumulative
        delivery time tracks the active rate."""
        remaining = length
        deadline = time.perf_counter()
        while remaining > 0:
            chunk = f.read(min(CHUNK_SIZE, remaining))
            if not chunk:
                break
            rate = self.config.rate_at(time.monotonic() - self.started_at)
            if rate is not None:
                deadline += len(chunk) / rate
                delay = deadline - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            else:
                deadline = time.perf_counter()
            self.wfile.write(chunk)
            remaining -= len(chunk)

    def _error(self, status: HTTPStatus, t0: float) -> None:
        body = f"{status.value} {status.phrase}\n".encode()
        self.send_response(status)
        self.send_header("Content-Type", "text/plain")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        try:
            self.wfile.write(body)
        except (BrokenPipeError, ConnectionResetError):
            pass
        self._log(status, len(body), t0)

    def _log(self, status: HTTPStatus, nbytes: int, t0: float) -> None:
        self.access_log.append({
            "ts": time.time(),
            "method": self.command,
            "path": urlparse(self.path).path,
            "status": int(status),
            "bytes": nbytes,
            "ms": round((time.perf_counter() - t0) * 1000.0, 3),
        })

    def log_message(self, fmt, *args) -> None:  # quiet the default stderr log
        log.debug("%s %s", self.address_string(), fmt % args)


class AccessLog:
    """Line-delimited JSON request records; appends are serialized."""

    def __init__(self, path: Path | None):
        self._lock = threading.Lock()
        self._path = path
        self.records: list[dict] = []
        self._fh = open(path, "a", encoding="utf-8") if path else None

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)
            if self._fh:
                self._fh.write(json.dumps(record) + "\n")
                self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh:
                self._fh.close()
                self._fh = None


class PointCloudServer:
    """Threaded HTTP origin; one handler thread per connection, so the
    throttle shapes each connection independently."""

    def __init__(self, config: ServeConfig):
        root = Path(config.root)
        if not (root / "manifest.mpd").is_file():
            raise FileNotFoundError(f"no manifest.mpd under {root}")
        self.config = config
        self.access_log = AccessLog(config.log_path)
        handler = type("BoundHandler", (_Handler,), {
            "config": config,
            "access_log": self.access_log,
            "started_at": time.monotonic(),
        })
        self._httpd = ThreadingHTTPServer((config.host, config.port), handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[:2]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}/"

    def start(self) -> "PointCloudServer":
        self._thread = threading.Thread(target=self._httpd.serve_forever,
                                        name="pcstream-server", daemon=True)
        # reset the schedule clock to actual service start
        type(self)._set_start(self._httpd.RequestHandlerClass)
        self._thread.start()
        return self

    @staticmethod
    def _set_start(handler_cls) -> None:
        handler_cls.started_at = time.monotonic()

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        self.access_log.close()

    def __enter__(self) -> "PointCloudServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def serve_forever(self) -> None:
        """Blocking variant for CLI use."""
        type(self)._set_start(self._httpd.RequestHandlerClass)
        try:
            self._httpd.serve_forever()
        finally:
            self._httpd.server_close()
            self.access_log.close()


def serve(config: ServeConfig) -> PointCloudServer:
    """Start a background origin for `config.root`; bind failures raise."""
    return PointCloudServer(config).start()
