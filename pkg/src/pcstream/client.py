"""Adaptive streaming client: fetch loop, throughput estimation,
representation selection from bandwidth and acuity caps, session logging,
and the live bridge a viewer can attach to.

Bridge wire format (little-endian): a stream of length-prefixed messages
[u32 length][u8 kind][payload], where length counts the kind byte plus the
payload.  Kinds: 'F' frame = {u32 frame index, u32 density, density x
15-byte packed XYZRGB records}; 'S' stats = one UTF-8 key=value line;
'V' viewport (inbound) = UTF-8 "dprime=<float> scale=<float>".  A browser
may connect with a WebSocket upgrade instead of raw TCP; each WebSocket
binary message then carries exactly one such record.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import queue
import socket
import struct
import threading
import time
import urllib.request
from dataclasses import dataclass, field
from urllib.error import URLError

from .acuity import ViewingGeometry, acuity_satisfied, effective_ppi, required_ppi_scaled
from .core import BoundingBox, PointCloud, load_ply, pack_vertex_records
from .manifest import Frame, ManifestError, Representation, parse_mpd, resolve_url

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.3
DEFAULT_SAFETY = 0.8
DEFAULT_BUFFER_FRAMES = 3
DEFAULT_FRAME_INTERVAL = 1.0 / 30.0

MSG_FRAME = 0x46     # 'F'
MSG_STATS = 0x53     # 'S'
MSG_VIEWPORT = 0x56  # 'V'

_RETRIES_PER_REPRESENTATION = 2
_CONSECUTIVE_FAILURE_LIMIT = 5

_WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11"


class ClientError(Exception):
    """Unrecoverable streaming failure."""


class ThroughputEstimator:
    """Exponentially weighted moving average over per-fetch rate samples."""

    def __init__(self, alpha: float = DEFAULT_ALPHA):
        if not (0 < alpha <= 1):
            raise ValueError("alpha must be in (0, 1]")
        self.alpha = alpha
        self.estimate: float | None = None  # bits per second
        self.last_sample: float | None = None

    def update(self, sample_bps: float) -> float:
        if not (sample_bps > 0):
            raise ValueError("rate sample must be positive")
        self.last_sample = sample_bps
        if self.estimate is None:
            self.estimate = sample_bps
        else:
            self.estimate = ((1 - self.alpha) * self.estimate
                             + self.alpha * sample_bps)
        return self.estimate


@dataclass(frozen=True)
class Selection:
    """Outcome of one representation decision."""

    chosen: Representation
    bandwidth_cap: Representation | None  # None before the first sample
    acuity_cap: Representation | None     # None before geometry is known


def select_representation(frame: Frame, tput_bps: float | None,
                          geometry: ViewingGeometry, frame_interval: float,
                          bbox: BoundingBox | None = None,
                          safety: float = DEFAULT_SAFETY,
                          set_id: str | None = None) -> Selection:
    """Pick the densest representation both caps allow.

    Bandwidth cap: densest representation whose bits fit the per-frame
    budget tput * interval * safety (the top one before any sample).
    Acuity cap: sparsest representation still meeting the acuity requirement
    (the top one when none suffices or the model extent is unknown).  The
    chosen representation is the lower-density of the two caps; when nothing
    fits the bandwidth budget the ladder floor is chosen rather than
    stalling.
    """
    sets = frame.adaptation_sets
    if set_id is not None:
        aset = next((s for s in sets if s.id == set_id), None)
        if aset is None:
            raise ManifestError(f"unknown adaptation set id {set_id!r}")
    else:
        aset = sets[0]
    reps = aset.representations  # densest first (validated ordering)

    bandwidth_cap = None
    if tput_bps is not None:
        budget_bits = tput_bps * frame_interval * safety
        for rep in reps:
            if 8 * rep.size <= budget_bits:
                bandwidth_cap = rep
                break
    else:
        bandwidth_cap = reps[0]

    acuity_cap = None
    if bbox is not None:
        for rep in reversed(reps):  # sparsest first
            if acuity_satisfied(rep.density, bbox, geometry):
                acuity_cap = rep
                break
        if acuity_cap is None:
            acuity_cap = reps[0]

    if bandwidth_cap is None:
        chosen = reps[-1]  # never stall on the ladder floor
    elif acuity_cap is None:
        chosen = bandwidth_cap
    else:
        chosen = min(bandwidth_cap, acuity_cap, key=lambda r: r.density)
    return Selection(chosen, bandwidth_cap, acuity_cap)


@dataclass
class SessionLog:
    """Auditable record of one streaming session: a self-describing header
    and one record per delivered frame, in delivery order."""

    params: dict
    records: list[dict] = field(default_factory=list)

    def representation_sequence(self) -> list[str]:
        return [r["rep"] for r in self.records]

    def total_media_bytes(self) -> int:
        return sum(r["bytes"] for r in self.records)

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"session": self.params}) + "\n")
            for rec in self.records:
                f.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path) -> "SessionLog":
        with open(path, encoding="utf-8") as f:
            header = json.loads(f.readline())
            records = [json.loads(line) for line in f if line.strip()]
        return cls(params=header["session"], records=records)


# ---------------------------------------------------------------------------
# Bridge wire format


def encode_message(kind: int, payload: bytes) -> bytes:
    return struct.pack("<I", 1 + len(payload)) + bytes([kind]) + payload


def encode_frame_payload(frame_index: int, cloud: PointCloud) -> bytes:
    return (struct.pack("<II", frame_index, cloud.size)
            + pack_vertex_records(cloud.positions, cloud.colors))


def encode_stats_payload(record: dict) -> bytes:
    text = " ".join(f"{k}={record[k]}" for k in sorted(record))
    return text.encode("utf-8")


def encode_viewport_payload(camera_distance_in: float, scale: float) -> bytes:
    return f"dprime={camera_distance_in!r} scale={scale!r}".encode()


def parse_viewport_payload(payload: bytes) -> tuple[float, float]:
    fields = dict(part.split("=", 1) for part in payload.decode().split())
    return float(fields["dprime"]), float(fields["scale"])


class MessageReader:
    """Incremental decoder for the length-prefixed message stream."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[tuple[int, bytes]]:
        self._buf.extend(data)
        out = []
        while True:
            if len(self._buf) < 5:
                break
            (length,) = struct.unpack_from("<I", self._buf, 0)
            if length < 1:
                raise ValueError("invalid message length")
            if len(self._buf) < 4 + length:
                break
            kind = self._buf[4]
            payload = bytes(self._buf[5:4 + length])
            del self._buf[:4 + length]
            out.append((kind, payload))
        return out


# ---------------------------------------------------------------------------
# Bridge server (raw TCP or WebSocket, one viewer at a time)


class _WsConnection:
    """Minimal server side of RFC 6455 framing over an accepted socket."""

    def __init__(self, sock: socket.socket, first_data: bytes):
        self._sock = sock
        self._recv_buf = bytearray()
        self._handshake(first_data)

    def _handshake(self, first_data: bytes) -> None:
        data = bytearray(first_data)
        while b"\r\n\r\n" not in data:
            more = self._sock.recv(4096)
            if not more:
                raise ConnectionError("socket closed during handshake")
            data.extend(more)
        head, _, rest = bytes(data).partition(b"\r\n\r\n")
        self._recv_buf.extend(rest)
        key = None
        for line in head.split(b"\r\n")[1:]:
            name, _, value = line.partition(b":")
            if name.strip().lower() == b"sec-websocket-key":
                key = value.strip().decode()
        if key is None:
            raise ConnectionError("missing Sec-WebSocket-Key")
        accept = base64.b64encode(
            hashlib.sha1((key + _WS_GUID).encode()).digest()).decode()
        self._sock.sendall(
            b"HTTP/1.1 101 Switching Protocols\r\n"
            b"Upgrade: websocket\r\nConnection: Upgrade\r\n"
            b"Sec-WebSocket-Accept: " + accept.encode() + b"\r\n\r\n")

    def send_binary(self, payload: bytes) -> None:
        n = len(payload)
        if n < 126:
            header = struct.pack("!BB", 0x82, n)
        elif n < 1 << 16:
            header = struct.pack("!BBH", 0x82, 126, n)
        else:
            header = struct.pack("!BBQ", 0x82, 127, n)
        self._sock.sendall(header + payload)

    def _read_exact(self, n: int) -> bytes:
        while len(self._recv_buf) < n:
            more = self._sock.recv(65536)
            if not more:
                raise ConnectionError("socket closed")
            self._recv_buf.extend(more)
        out = bytes(self._recv_buf[:n])
        del self._recv_buf[:n]
        return out

    def recv_message(self) -> bytes | None:
        """Next binary/text payload from the client; None when closed."""
        while True:
            b0, b1 = self._read_exact(2)
            opcode = b0 & 0x0F
            masked = b1 & 0x80
            length = b1 & 0x7F
            if length == 126:
                (length,) = struct.unpack("!H", self._read_exact(2))
            elif length == 127:
                (length,) = struct.unpack("!Q", self._read_exact(8))
            mask = self._read_exact(4) if masked else b"\x00" * 4
            payload = bytearray(self._read_exact(length))
            if masked:
                for i in range(length):
                    payload[i] ^= mask[i % 4]
            if opcode == 0x8:  # close
                return None
            if opcode == 0x9:  # ping -> pong
                self._sock.sendall(
                    struct.pack("!BB", 0x8A, len(payload)) + bytes(payload))
                continue
            if opcode in (0x1, 0x2):
                return bytes(payload)
            # continuation/pong/reserved: skip


class BridgeServer:
    """Pushes frames and stats to one attached viewer and folds inbound
    viewport updates into the live viewing geometry.

    The first bytes of a connection decide the transport: an HTTP GET means
    a WebSocket upgrade, anything else is the raw TCP stream (a silent
    connection counts as raw after a short wait, so raw clients may send any
    message right away to skip that wait).  Streaming is never blocked by
    the viewer: with nobody attached pushes are dropped.
    """

    def __init__(self, host: str, port: int, geometry: ViewingGeometry):
        self._geometry = geometry
        self._geo_lock = threading.Lock()
        self._conn_lock = threading.Lock()
        self._conn: socket.socket | _WsConnection | None = None
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.25)
        self._closing = False
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="bridge-accept",
                                               daemon=True)
        self._accept_thread.start()

    @property
    def address(self) -> tuple[str, int]:
        return self._listener.getsockname()[:2]

    def geometry(self) -> ViewingGeometry:
        with self._geo_lock:
            return self._geometry

    def _set_geometry(self, dprime: float, scale: float) -> None:
        with self._geo_lock:
            self._geometry = self._geometry.with_viewport(dprime, scale)

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            try:
                # A WebSocket client speaks first (the HTTP upgrade); a raw
                # TCP viewer may stay silent, so a quiet connection is raw.
                sock.settimeout(0.5)
                try:
                    first = sock.recv(4, socket.MSG_PEEK)
                except socket.timeout:
                    first = b""
                sock.settimeout(None)
                if first.startswith(b"GET"):
                    conn = _WsConnection(sock, b"")
                else:
                    conn = sock
            except (OSError, ConnectionError):
                sock.close()
                continue
            with self._conn_lock:
                if self._conn is not None:
                    sock.close()  # one viewer at a time
                    continue
                self._conn = conn
            threading.Thread(target=self._reader_loop, args=(conn, sock),
                             name="bridge-reader", daemon=True).start()

    def _reader_loop(self, conn, sock: socket.socket) -> None:
        reader = MessageReader()
        try:
            while not self._closing:
                if isinstance(conn, _WsConnection):
                    payload = conn.recv_message()
                    if payload is None:
                        break
                    messages = reader.feed(payload)
                else:
                    data = sock.recv(65536)
                    if not data:
                        break
                    messages = reader.feed(data)
                for kind, body in messages:
                    if kind == MSG_VIEWPORT:
                        dprime, scale = parse_viewport_payload(body)
                        self._set_geometry(dprime, scale)
                        log.debug("viewport update D'=%s S=%s", dprime, scale)
        except (OSError, ConnectionError, ValueError):
            pass
        finally:
            self._drop(conn, sock)

    @staticmethod
    def _teardown(sock: socket.socket) -> None:
        # shutdown first: close() alone does not send FIN while another
        # thread is blocked in recv on the same socket
        try:
            sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            sock.close()
        except OSError:
            pass

    def _drop(self, conn, sock) -> None:
        with self._conn_lock:
            if self._conn is conn:
                self._conn = None
        self._teardown(sock)

    def _push(self, message: bytes) -> None:
        with self._conn_lock:
            conn = self._conn
        if conn is None:
            return
        try:
            if isinstance(conn, _WsConnection):
                conn.send_binary(message)
            else:
                conn.sendall(message)
        except OSError:
            log.info("viewer disconnected during push")
            with self._conn_lock:
                if self._conn is conn:
                    self._conn = None

    def push_frame(self, frame_index: int, cloud: PointCloud) -> None:
        self._push(encode_message(MSG_FRAME,
                                  encode_frame_payload(frame_index, cloud)))

    def push_stats(self, record: dict) -> None:
        self._push(encode_message(MSG_STATS, encode_stats_payload(record)))

    def close(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._conn_lock:
            conn, self._conn = self._conn, None
        if isinstance(conn, _WsConnection):
            conn = conn._sock
        if conn is not None:
            self._teardown(conn)


# ---------------------------------------------------------------------------
# Streaming session


def _hud_stats(record: dict, cloud: PointCloud,
               geometry: ViewingGeometry) -> dict:
    """Stats pushed to the viewer: the session record plus the acuity
    figures the HUD displays."""
    stats = dict(record)
    stats["req_ppi"] = round(required_ppi_scaled(geometry), 4)
    try:
        if cloud.size:
            stats["eff_ppi"] = round(
                effective_ppi(cloud.size, cloud.bbox, geometry), 4)
    except ValueError:
        pass  # degenerate extent: no meaningful surface density
    return stats


def _fetch(url: str, timeout: float = 30.0) -> tuple[bytes, float]:
    """GET a URL; returns (body, seconds from request to last byte)."""
    t0 = time.perf_counter()
    chunks = []
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        while True:
            chunk = resp.read(65536)
            if not chunk:
                break
            chunks.append(chunk)
    return b"".join(chunks), time.perf_counter() - t0


def stream(manifest_url: str, geometry: ViewingGeometry,
           log_path=None, sink=None, alpha: float = DEFAULT_ALPHA,
           safety: float = DEFAULT_SAFETY,
           buffer_frames: int = DEFAULT_BUFFER_FRAMES,
           frame_interval: float = DEFAULT_FRAME_INTERVAL,
           set_id: str | None = None,
           bridge_addr: tuple[str, int] | None = None,
           pace_delivery: bool = True) -> SessionLog:
    """Stream every frame of a manifest, adapting density per frame.

    Per frame: select a representation from the current throughput estimate
    and live viewing geometry, fetch it, fold the measured rate into the
    estimator, decode, and hand the frame to the delivery stage, which paces
    output, appends the session log, and feeds the bridge.  A lookahead
    queue of `buffer_frames` decouples fetching from delivery.  Transient
    HTTP failures are retried twice, then the ladder floor is tried;
    `_CONSECUTIVE_FAILURE_LIMIT` unanswered fetches abort the session.
    """
    try:
        body, _ = _fetch(manifest_url)
        mpd = parse_mpd(body)
    except (URLError, OSError, ManifestError) as exc:
        raise ClientError(
            f"cannot load manifest {manifest_url}: {exc}") from exc

    bridge = None
    if bridge_addr is not None:
        bridge = BridgeServer(bridge_addr[0], bridge_addr[1], geometry)

    estimator = ThroughputEstimator(alpha)
    params = {
        "manifest": manifest_url,
        "alpha": alpha,
        "safety": safety,
        "buffer_frames": buffer_frames,
        "frame_interval": frame_interval,
        "adaptation_set": set_id,
        "screen_distance_in": geometry.screen_distance_in,
        "camera_distance_in": geometry.camera_distance_in,
        "scale": geometry.scale,
        "units_per_inch": geometry.units_per_inch,
        "bridge": list(bridge.address) if bridge else None,
    }
    session = SessionLog(params=params)

    frames_q: queue.Queue = queue.Queue(maxsize=max(1, buffer_frames))
    deliver_errors: list[Exception] = []

    def deliver_loop() -> None:
        next_at = time.monotonic()
        while True:
            item = frames_q.get()
            if item is None:
                return
            record, cloud, frame_index = item
            if pace_delivery:
                now = time.monotonic()
                if now < next_at:
                    time.sleep(next_at - now)
                next_at = max(next_at + frame_interval, now)
            try:
                session.records.append(record)
                if sink is not None:
                    sink(record, cloud)
                if bridge is not None:
                    bridge.push_frame(frame_index, cloud)
                    bridge.push_stats(_hud_stats(record, cloud,
                                                 bridge.geometry()))
            except Exception as exc:  # pragma: no cover - defensive
                deliver_errors.append(exc)

    deliver = threading.Thread(target=deliver_loop, name="deliver",
                               daemon=True)
    deliver.start()

    consecutive_failures = 0
    state_bbox: BoundingBox | None = None
    try:
        for frame_index, frame in enumerate(mpd.frames):
            live_geometry = bridge.geometry() if bridge else geometry
            selection = select_representation(
                frame, estimator.estimate, live_geometry, frame_interval,
                bbox=state_bbox, safety=safety, set_id=set_id)
            aset = (frame.adaptation_sets[0] if set_id is None
                    else next(s for s in frame.adaptation_sets
                              if s.id == set_id))
            floor_rep = aset.representations[-1]

            body = None
            used_rep = selection.chosen
            for rep in ([selection.chosen] if selection.chosen is floor_rep
                        else [selection.chosen, floor_rep]):
                for _ in range(1 + _RETRIES_PER_REPRESENTATION):
                    seg = rep.segments[0]
                    url = resolve_url(mpd, frame.id, aset.id, rep.id, seg.id,
                                      base=manifest_url)
                    try:
                        body, seconds = _fetch(url)
                        consecutive_failures = 0
                        used_rep = rep
                        break
                    except (URLError, OSError) as exc:
                        consecutive_failures += 1
                        log.warning("fetch failed (%s): %s", url, exc)
                        if consecutive_failures >= _CONSECUTIVE_FAILURE_LIMIT:
                            raise ClientError(
                                f"aborting after {consecutive_failures} "
                                f"consecutive fetch failures") from exc
                if body is not None:
                    break
            if body is None:
                raise ClientError(
                    f"frame {frame.id}: all representations unreachable")

            sample_bps = 8 * len(body) / max(seconds, 1e-9)
            estimator.update(sample_bps)
            try:
                cloud = load_ply(body)
            except Exception as exc:
                raise ClientError(f"frame {frame.id}: bad media: {exc}") from exc
            if cloud.size:
                state_bbox = cloud.bbox

            record = {
                "frame": frame.id,
                "rep": used_rep.id,
                "density": used_rep.density,
                "bytes": len(body),
                "fetch_ms": round(seconds * 1000.0, 3),
                "tput_bps": (None if estimator.estimate is None
                             else round(estimator.estimate, 1)),
                "bw_cap": (selection.bandwidth_cap.id
                           if selection.bandwidth_cap else None),
                "acuity_cap": (selection.acuity_cap.id
                               if selection.acuity_cap else None),
            }
            frames_q.put((record, cloud, frame_index))
    finally:
        frames_q.put(None)
        deliver.join(timeout=30)
        if bridge is not None:
            bridge.close()

    if deliver_errors:
        raise ClientError(f"delivery failed: {deliver_errors[0]}")
    if log_path is not None:
        session.dump(log_path)
    return session
