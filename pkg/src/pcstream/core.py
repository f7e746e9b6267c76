"""Point-cloud data model and PLY container I/O.

Coordinates are held as float64 internally so that centroid/scale math does
not drift; PLY files store float32 and writing truncates accordingly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple

import numpy as np

ASCII = "ascii"
BINARY = "binary_little_endian"
ENCODINGS = (ASCII, BINARY)

_VERTEX_DTYPE = np.dtype([
    ("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
    ("red", "u1"), ("green", "u1"), ("blue", "u1"),
])
VERTEX_RECORD_SIZE = _VERTEX_DTYPE.itemsize  # 15 bytes, packed

_SCALAR_SIZES = {
    "char": 1, "int8": 1, "uchar": 1, "uint8": 1,
    "short": 2, "int16": 2, "ushort": 2, "uint16": 2,
    "int": 4, "int32": 4, "uint": 4, "uint32": 4,
    "float": 4, "float32": 4, "double": 8, "float64": 8,
}
_SCALAR_NUMPY = {
    "char": "<i1", "int8": "<i1", "uchar": "u1", "uint8": "u1",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "float": "<f4", "float32": "<f4", "double": "<f8", "float64": "<f8",
}
_FLOAT32_TYPES = {"float", "float32"}
_UINT8_TYPES = {"uchar", "uint8"}
# Tolerant property naming: 8i-style files carry exactly x,y,z,red,green,blue
# but some writers abbreviate or prefix the color channels.
_NAME_ALIASES = {
    "x": "x", "y": "y", "z": "z",
    "red": "red", "r": "red", "diffuse_red": "red",
    "green": "green", "g": "green", "diffuse_green": "green",
    "blue": "blue", "b": "blue", "diffuse_blue": "blue",
}
_REQUIRED = ("x", "y", "z", "red", "green", "blue")
_MAX_HEADER_LINES = 1000


class PlyError(Exception):
    """Malformed or unsupported PLY content."""


class Point(NamedTuple):
    x: float
    y: float
    z: float
    r: int
    g: int
    b: int


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned bounds in model units."""

    lo: np.ndarray
    hi: np.ndarray

    @property
    def extents(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


class PointCloud:
    """Ordered XYZ+RGB point set. Immutable after construction.

    Point order is significant and preserved by I/O round-trips; the bounding
    box is derived lazily from the exact component-wise min/max.
    """

    __slots__ = ("positions", "colors", "_bbox", "_cache")

    positions: np.ndarray  # (n, 3) float64
    colors: np.ndarray     # (n, 3) uint8

    def __init__(self, positions, colors) -> None:
        pos = np.ascontiguousarray(positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError("positions must have shape (n, 3)")
        col = np.asarray(colors)
        if col.shape != pos.shape:
            raise ValueError("colors must have shape (n, 3) matching positions")
        if col.dtype != np.uint8:
            if col.dtype.kind == "f" and col.size and not np.all(col == np.floor(col)):
                raise ValueError("color channels must be integer-valued")
            if col.size and (col.min() < 0 or col.max() > 255):
                raise ValueError("color channel out of range 0..255")
            col = col.astype(np.uint8)
        col = np.ascontiguousarray(col)
        if pos.size and not np.isfinite(pos).all():
            raise ValueError("coordinates must be finite")
        pos.setflags(write=False)
        col.setflags(write=False)
        self.positions = pos
        self.colors = col
        self._bbox = None
        self._cache = {}  # memoized derived structures (spatial orders etc.)

    @classmethod
    def from_points(cls, points: Iterable[tuple]) -> "PointCloud":
        rows = list(points)
        if not rows:
            return cls(np.empty((0, 3)), np.empty((0, 3), np.uint8))
        arr = np.asarray(rows, dtype=np.float64)
        return cls(arr[:, :3], arr[:, 3:6])

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def __len__(self) -> int:
        return self.size

    @property
    def bbox(self) -> BoundingBox | None:
        if self.size == 0:
            return None
        if self._bbox is None:
            lo = self.positions.min(axis=0)
            hi = self.positions.max(axis=0)
            lo.setflags(write=False)
            hi.setflags(write=False)
            object.__setattr__(self, "_bbox", BoundingBox(lo, hi))
        return self._bbox

    def point(self, i: int) -> Point:
        x, y, z = self.positions[i]
        r, g, b = self.colors[i]
        return Point(float(x), float(y), float(z), int(r), int(g), int(b))

    def __iter__(self) -> Iterator[Point]:
        for i in range(self.size):
            yield self.point(i)

    def take(self, indices) -> "PointCloud":
        """New cloud with the points at `indices`, in that order."""
        idx = np.asarray(indices, dtype=np.intp)
        return PointCloud(self.positions[idx], self.colors[idx])

    def __eq__(self, other) -> bool:
        if not isinstance(other, PointCloud):
            return NotImplemented
        return (self.positions.shape == other.positions.shape
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.colors, other.colors))

    def __hash__(self):  # pragma: no cover - identity hashing only
        return id(self)

    def __repr__(self) -> str:
        return f"PointCloud({self.size} points)"


@dataclass(frozen=True)
class PlyHeader:
    """Parsed PLY header metadata (vertex element only)."""

    encoding: str
    vertex_count: int
    properties: tuple[tuple[str, str], ...]  # declared (name, type) pairs
    data_offset: int  # byte offset of the first vertex datum
    stride: int       # bytes per vertex record (binary encoding)


def _as_stream(data: bytes | BinaryIO) -> BinaryIO:
    if isinstance(data, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(data))
    return data


def parse_ply_header(data: bytes | BinaryIO) -> PlyHeader:
    """Parse and validate a PLY header without reading vertex data."""
    stream = _as_stream(data)
    line = stream.readline()
    if line.strip() != b"ply":
        raise PlyError("malformed header: missing 'ply' magic")
    encoding = None
    vertex_count = None
    properties: list[tuple[str, str]] = []
    current_element = None
    vertex_seen = False
    offset = len(line)
    for _ in range(_MAX_HEADER_LINES):
        raw = stream.readline()
        if not raw:
            raise PlyError("malformed header: missing end_header")
        offset += len(raw)
        fields = raw.decode("latin-1").strip().split()
        if not fields or fields[0] in ("comment", "obj_info"):
            continue
        keyword = fields[0]
        if keyword == "format":
            if len(fields) != 3 or fields[2] != "1.0":
                raise PlyError(f"malformed header: bad format line {raw!r}")
            if fields[1] == "ascii":
                encoding = ASCII
            elif fields[1] == "binary_little_endian":
                encoding = BINARY
            elif fields[1] == "binary_big_endian":
                raise PlyError("unsupported encoding: binary_big_endian")
            else:
                raise PlyError(f"unsupported encoding: {fields[1]}")
        elif keyword == "element":
            if len(fields) != 3:
                raise PlyError(f"malformed header: bad element line {raw!r}")
            current_element = fields[1]
            if current_element == "vertex":
                if vertex_seen:
                    raise PlyError("malformed header: duplicate vertex element")
                vertex_seen = True
                try:
                    vertex_count = int(fields[2])
                except ValueError:
                    raise PlyError("malformed header: bad vertex count") from None
                if vertex_count < 0:
                    raise PlyError("malformed header: negative vertex count")
            elif not vertex_seen:
                try:
                    count = int(fields[2])
                except ValueError:
                    raise PlyError("malformed header: bad element count") from None
                if count > 0:
                    # We would have to skip its data to find the vertices.
                    raise PlyError("unsupported layout: vertex element must come first")
        elif keyword == "property":
            if current_element != "vertex":
                continue  # properties of trailing elements are never read
            if len(fields) >= 2 and fields[1] == "list":
                raise PlyError("unsupported layout: list property on vertex element")
            if len(fields) != 3:
                raise PlyError(f"malformed header: bad property line {raw!r}")
            ptype, pname = fields[1], fields[2]
            if ptype not in _SCALAR_SIZES:
                raise PlyError(f"unsupported property type: {ptype}")
            properties.append((pname, ptype))
        elif keyword == "end_header":
            break
        else:
            raise PlyError(f"malformed header: unknown keyword {keyword!r}")
    else:
        raise PlyError("malformed header: header too long")
    if encoding is None:
        raise PlyError("malformed header: missing format line")
    if vertex_count is None:
        raise PlyError("malformed header: missing vertex element")

    seen: dict[str, tuple[int, str]] = {}
    for col, (pname, ptype) in enumerate(properties):
        canon = _NAME_ALIASES.get(pname)
        if canon is not None and canon not in seen:
            seen[canon] = (col, ptype)
    for name in _REQUIRED:
        if name not in seen:
            raise PlyError(f"malformed header: missing vertex property '{name}'")
    for name in ("x", "y", "z"):
        if seen[name][1] not in _FLOAT32_TYPES:
            raise PlyError(f"unsupported property type: '{name}' must be 32-bit float")
    for name in ("red", "green", "blue"):
        if seen[name][1] not in _UINT8_TYPES:
            raise PlyError(f"unsupported property type: '{name}' must be 8-bit unsigned")

    stride = sum(_SCALAR_SIZES[t] for _, t in properties)
    return PlyHeader(encoding, vertex_count, tuple(properties), offset, stride)


def _column_map(header: PlyHeader) -> dict[str, int]:
    cols: dict[str, int] = {}
    for col, (pname, _) in enumerate(header.properties):
        canon = _NAME_ALIASES.get(pname)
        if canon is not None and canon not in cols:
            cols[canon] = col
    return cols


def load_ply(data: bytes | BinaryIO) -> PointCloud:
    """Read an XYZ+RGB point cloud from PLY bytes or a binary stream.

    Accepts ascii and binary_little_endian encodings; extra scalar per-vertex
    properties are skipped and trailing non-vertex elements are ignored.
    """
    stream = _as_stream(data)
    header = parse_ply_header(stream)
    n = header.vertex_count
    cols = _column_map(header)
    ncols = len(header.properties)

    if n == 0:
        return PointCloud(np.empty((0, 3)), np.empty((0, 3), np.uint8))

    if header.encoding == BINARY:
        payload = stream.read(header.stride * n)
        if len(payload) < header.stride * n:
            raise PlyError(
                f"vertex count mismatch: expected {n} records "
                f"({header.stride * n} bytes), got {len(payload)} bytes")
        dtype = np.dtype([(f"c{i}", _SCALAR_NUMPY[t])
                          for i, (_, t) in enumerate(header.properties)])
        table = np.frombuffer(payload, dtype=dtype, count=n)
        pos = np.stack([table[f"c{cols[a]}"] for a in ("x", "y", "z")],
                       axis=1).astype(np.float64)
        col = np.stack([table[f"c{cols[a]}"] for a in ("red", "green", "blue")],
                       axis=1).astype(np.uint8)
    else:
        tokens = stream.read().split()
        need = n * ncols
        if len(tokens) < need:
            raise PlyError(
                f"vertex count mismatch: expected {n} rows of {ncols} values, "
                f"got {len(tokens)} values")
        try:
            table = np.array(tokens[:need]).astype(np.float64).reshape(n, ncols)
        except ValueError:
            raise PlyError("malformed vertex data: non-numeric value") from None
        # Values are declared 32-bit in the header; normalize through float32
        # so ascii and binary inputs agree bit for bit.
        pos = table[:, [cols["x"], cols["y"], cols["z"]]].astype(
            np.float32).astype(np.float64)
        col = table[:, [cols["red"], cols["green"], cols["blue"]]]
        if not np.all(col == np.floor(col)):
            raise PlyError("malformed vertex data: non-integer color channel")
        if col.min() < 0 or col.max() > 255:
            raise PlyError("malformed vertex data: color channel out of range")
        col = col.astype(np.uint8)

    if not np.isfinite(pos).all():
        raise PlyError("non-finite coordinate in vertex data")
    return PointCloud(pos, col)


def _canonical_header(encoding: str, n: int) -> bytes:
    fmt = "ascii" if encoding == ASCII else "binary_little_endian"
    return (
        b"ply\n"
        + f"format {fmt} 1.0\n".encode()
        + f"element vertex {n}\n".encode()
        + b"property float x\n"
        + b"property float y\n"
        + b"property float z\n"
        + b"property uchar red\n"
        + b"property uchar green\n"
        + b"property uchar blue\n"
        + b"end_header\n"
    )


def pack_vertex_records(positions: np.ndarray, colors: np.ndarray) -> bytes:
    """Pack points into 15-byte little-endian XYZRGB records."""
    n = positions.shape[0]
    out = np.empty(n, dtype=_VERTEX_DTYPE)
    pos32 = positions.astype(np.float32)
    for i, name in enumerate(("x", "y", "z")):
        out[name] = pos32[:, i]
    for i, name in enumerate(("red", "green", "blue")):
        out[name] = colors[:, i]
    return out.tobytes()


def unpack_vertex_records(buf: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of pack_vertex_records; returns (positions, colors)."""
    if len(buf) % VERTEX_RECORD_SIZE:
        raise ValueError("packed vertex buffer is not a whole number of records")
    table = np.frombuffer(buf, dtype=_VERTEX_DTYPE)
    pos = np.stack([table["x"], table["y"], table["z"]], axis=1).astype(np.float64)
    col = np.stack([table["red"], table["green"], table["blue"]], axis=1)
    return pos, np.ascontiguousarray(col)


def save_ply(cloud: PointCloud, encoding: str = BINARY) -> bytes:
    """Serialize a cloud to PLY with the canonical six-property header.

    Output bytes are deterministic for identical input.
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}")
    if cloud.size == 0:
        raise ValueError("cannot save an empty point cloud")
    header = _canonical_header(encoding, cloud.size)
    if encoding == BINARY:
        return header + pack_vertex_records(cloud.positions, cloud.colors)
    pos32 = cloud.positions.astype(np.float32).tolist()
    cols = cloud.colors.tolist()
    lines = [
        "%.9g %.9g %.9g %d %d %d" % (x, y, z, r, g, b)
        for (x, y, z), (r, g, b) in zip(pos32, cols)
    ]
    return header + ("\n".join(lines) + "\n").encode()


def read_ply(path) -> PointCloud:
    with open(path, "rb") as f:
        return load_ply(f)


def write_ply(path, cloud: PointCloud, encoding: str = BINARY) -> int:
    data = save_ply(cloud, encoding)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def scale(cloud: PointCloud, factor: float) -> PointCloud:
    """Scale about the bounding-box center; colors and count unchanged."""
    if not (factor > 0) or not np.isfinite(factor):
        raise ValueError("scale factor must be a positive finite number")
    if cloud.size == 0:
        return cloud
    center = cloud.bbox.center
    return PointCloud(center + factor * (cloud.positions - center), cloud.colors)


def spatial_order(positions: np.ndarray) -> np.ndarray:
    """Permutation from three successive stable sorts on X, then Y, then Z.

    Net effect: lexicographic order by (z, y, x) with ties broken by the
    original index (np.lexsort is stable).
    """
    return np.lexsort((positions[:, 0], positions[:, 1], positions[:, 2]))


def sort_spatial(cloud: PointCloud) -> PointCloud:
    """Cloud reordered into canonical spatial order."""
    return cloud.take(spatial_order(cloud.positions))
