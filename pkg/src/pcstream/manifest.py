"""Media presentation description for point-cloud streams.

A manifest describes frames, each holding adaptation sets of interchangeable
representations (density ladders), each made of fetchable segments.  The XML
schema is PointCloudMPD > Frame > AdaptationSet > Representation > Segment
with attributes format, encoding, frames, type, id, density, size; a BaseURL
child element may appear first at every level.
"""

from __future__ import annotations

import logging
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from urllib.parse import urljoin, urlparse

from .core import ASCII, BINARY, read_ply, save_ply
from .subsample import SamplingSpec, subsample as _run_sampling

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.mpd"

ENCODING_NAMES = {ASCII: "ascii", BINARY: "binary"}
ENCODING_FROM_NAME = {"ascii": ASCII, "binary": BINARY}


class ManifestError(Exception):
    """Invalid manifest structure or content."""


@dataclass
class Segment:
    """The fetchable unit: one PLY sub-model."""

    id: str
    base_url: str  # required; resolving it yields the media URL
    density: int
    size: int

    def validate(self) -> None:
        if not self.base_url:
            raise ManifestError(f"segment {self.id!r} missing BaseURL")
        if self.density <= 0:
            raise ManifestError(f"segment {self.id!r} density must be positive")
        if self.size <= 0:
            raise ManifestError(f"segment {self.id!r} size must be positive")


@dataclass
class Representation:
    """One deliverable density version of a frame."""

    id: str
    density: int
    size: int
    base_url: str | None = None
    segments: list[Segment] = field(default_factory=list)

    def validate(self) -> None:
        if self.density <= 0:
            raise ManifestError(
                f"representation {self.id!r} density must be positive")
        if self.size <= 0:
            raise ManifestError(
                f"representation {self.id!r} size must be positive")
        if not self.segments:
            raise ManifestError(f"representation {self.id!r} has no segments")
        _check_unique("segment", (s.id for s in self.segments))
        for seg in self.segments:
            seg.validate()
        if len(self.segments) > 1:
            total = sum(s.density for s in self.segments)
            if total != self.density:
                raise ManifestError(
                    f"representation {self.id!r}: segment densities sum to "
                    f"{total}, expected {self.density}")


@dataclass
class AdaptationSet:
    """Interchangeable quality versions of one frame."""

    id: str
    representations: list[Representation]
    base_url: str | None = None
    label: str | None = None

    def validate(self) -> None:
        if not self.representations:
            raise ManifestError(f"adaptation set {self.id!r} is empty")
        _check_unique("representation", (r.id for r in self.representations))
        for rep in self.representations:
            rep.validate()
        densities = [r.density for r in self.representations]
        if any(a <= b for a, b in zip(densities, densities[1:])):
            raise ManifestError(
                f"adaptation set {self.id!r}: representation densities must "
                f"be strictly decreasing, got {densities}")
        sizes = [r.size for r in self.representations]
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise ManifestError(
                f"adaptation set {self.id!r}: representation sizes must be "
                f"non-increasing, got {sizes}")


@dataclass
class Frame:
    """A single point-cloud model in the sequence."""

    id: str
    adaptation_sets: list[AdaptationSet]
    base_url: str | None = None

    def validate(self) -> None:
        if not self.adaptation_sets:
            raise ManifestError(f"frame {self.id!r} has no adaptation sets")
        _check_unique("adaptation set", (s.id for s in self.adaptation_sets))
        for aset in self.adaptation_sets:
            aset.validate()


@dataclass
class Mpd:
    """Top-level presentation description."""

    frames: list[Frame]
    format: str = "ply"
    encoding: str = "binary"
    type: str = "static"
    base_url: str | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frames)

    def validate(self) -> None:
        if self.encoding not in ENCODING_FROM_NAME:
            raise ManifestError(f"unknown encoding {self.encoding!r}")
        if self.type not in ("static", "dynamic"):
            raise ManifestError(f"unknown type {self.type!r}")
        if not self.frames:
            raise ManifestError("manifest has no frames")
        _check_unique("frame", (f.id for f in self.frames))
        for frame in self.frames:
            frame.validate()

    def frame(self, frame_id: str) -> Frame:
        for f in self.frames:
            if f.id == frame_id:
                return f
        raise ManifestError(f"unknown frame id {frame_id!r}")


def _check_unique(kind: str, ids) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise ManifestError(f"duplicate {kind} id {i!r}")
        seen.add(i)


# ---------------------------------------------------------------------------
# XML serialization


def _base_url_child(element: ET.Element, url: str | None) -> None:
    if url is not None:
        ET.SubElement(element, "BaseURL").text = url


def serialize_mpd(mpd: Mpd) -> str:
    """Deterministic UTF-8 XML for a valid manifest."""
    mpd.validate()
    root = ET.Element("PointCloudMPD", {
        "format": mpd.format,
        "encoding": mpd.encoding,
        "frames": str(mpd.frame_count),
        "type": mpd.type,
    })
    _base_url_child(root, mpd.base_url)
    for frame in mpd.frames:
        fel = ET.SubElement(root, "Frame", {"id": frame.id})
        _base_url_child(fel, frame.base_url)
        for aset in frame.adaptation_sets:
            ael = ET.SubElement(fel, "AdaptationSet", {"id": aset.id})
            _base_url_child(ael, aset.base_url)
            if aset.label is not None:
                ET.SubElement(ael, "Label").text = aset.label
            for rep in aset.representations:
                rel = ET.SubElement(ael, "Representation", {
                    "id": rep.id,
                    "density": str(rep.density),
                    "size": str(rep.size),
                })
                _base_url_child(rel, rep.base_url)
                for seg in rep.segments:
                    sel = ET.SubElement(rel, "Segment", {
                        "id": seg.id,
                        "density": str(seg.density),
                        "size": str(seg.size),
                    })
                    _base_url_child(sel, seg.base_url)
    ET.indent(root)
    return ET.tostring(root, encoding="unicode", xml_declaration=True) + "\n"


def _attr(el: ET.Element, name: str, known: set[str]) -> str:
    for extra in el.attrib:
        if extra not in known:
            log.warning("ignoring unknown attribute %r on <%s>", extra, el.tag)
    value = el.get(name)
    if value is None:
        raise ManifestError(
            f'missing required attribute "{name}" on <{el.tag}>')
    return value


def _int_attr(el: ET.Element, name: str, known: set[str]) -> int:
    raw = _attr(el, name, known)
    try:
        return int(raw)
    except ValueError:
        raise ManifestError(
            f'attribute "{name}" on <{el.tag}> is not an integer: {raw!r}'
        ) from None


def _children(el: ET.Element, expected: str) -> tuple[str | None, str | None, list[ET.Element]]:
    """Split children into (base_url, label, expected-tag elements)."""
    base_url = None
    label = None
    wanted = []
    for child in el:
        if child.tag == "BaseURL":
            if base_url is not None:
                raise ManifestError(f"duplicate BaseURL under <{el.tag}>")
            base_url = child.text or ""
        elif child.tag == "Label":
            label = child.text or ""
        elif child.tag == expected:
            wanted.append(child)
        else:
            log.warning("ignoring unknown element <%s> under <%s>",
                        child.tag, el.tag)
    return base_url, label, wanted


def parse_mpd(text: str | bytes) -> Mpd:
    """Inverse of serialize_mpd; unknown attributes/elements are ignored with
    a warning."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ManifestError(f"malformed XML: {exc}") from None
    if root.tag != "PointCloudMPD":
        raise ManifestError(f"unexpected root element <{root.tag}>")
    known_root = {"format", "encoding", "frames", "type"}
    fmt = _attr(root, "format", known_root)
    encoding = _attr(root, "encoding", known_root)
    declared = _int_attr(root, "frames", known_root)
    mtype = root.get("type", "static")

    base_url, _, frame_els = _children(root, "Frame")
    frames = []
    for fel in frame_els:
        f_base, _, aset_els = _children(fel, "AdaptationSet")
        asets = []
        for ael in aset_els:
            a_base, a_label, rep_els = _children(ael, "Representation")
            reps = []
            for rel in rep_els:
                known_rep = {"id", "density", "size"}
                r_base, _, seg_els = _children(rel, "Segment")
                segs = []
                for sel in seg_els:
                    s_base, _, _ = _children(sel, "")
                    if s_base is None:
                        raise ManifestError(
                            f'segment {sel.get("id")!r} missing BaseURL')
                    segs.append(Segment(
                        id=_attr(sel, "id", known_rep),
                        base_url=s_base,
                        density=_int_attr(sel, "density", known_rep),
                        size=_int_attr(sel, "size", known_rep)))
                reps.append(Representation(
                    id=_attr(rel, "id", known_rep),
                    density=_int_attr(rel, "density", known_rep),
                    size=_int_attr(rel, "size", known_rep),
                    base_url=r_base,
                    segments=segs))
            asets.append(AdaptationSet(id=_attr(ael, "id", {"id"}),
                                       representations=reps,
                                       base_url=a_base, label=a_label))
        frames.append(Frame(id=_attr(fel, "id", {"id"}),
                            adaptation_sets=asets, base_url=f_base))

    mpd = Mpd(frames=frames, format=fmt, encoding=encoding, type=mtype,
              base_url=base_url)
    if declared != mpd.frame_count:
        raise ManifestError(
            f"frames-count mismatch: declared {declared}, found "
            f"{mpd.frame_count}")
    mpd.validate()
    return mpd


# ---------------------------------------------------------------------------
# URL resolution


def resolve_url(mpd: Mpd, frame_id: str, set_id: str, rep_id: str,
                segment_id: str, base: str | None = None) -> str:
    """Resolve a segment's absolute URL through the BaseURL hierarchy.

    Relative references resolve level by level (document base, then
    manifest, frame, adaptation set, representation, segment); an absolute
    BaseURL at any level overrides everything above it.
    """
    frame = mpd.frame(frame_id)
    aset = next((s for s in frame.adaptation_sets if s.id == set_id), None)
    if aset is None:
        raise ManifestError(f"unknown adaptation set id {set_id!r}")
    rep = next((r for r in aset.representations if r.id == rep_id), None)
    if rep is None:
        raise ManifestError(f"unknown representation id {rep_id!r}")
    seg = next((s for s in rep.segments if s.id == segment_id), None)
    if seg is None:
        raise ManifestError(f"unknown segment id {segment_id!r}")

    url = base or ""
    for part in (mpd.base_url, frame.base_url, aset.base_url, rep.base_url,
                 seg.base_url):
        if part:
            url = urljoin(url, part) if url else part
    if not urlparse(url).scheme:
        raise ManifestError(f"unresolvable URL {url!r}: no absolute root")
    return url


# ---------------------------------------------------------------------------
# Packaging


def package(frame_files: Sequence, ladder: Sequence[SamplingSpec],
            out_dir, encoding: str = BINARY,
            set_id: str = "set_0") -> Mpd:
    """Generate the media tree and manifest for a frame sequence.

    For every frame x ladder entry the sub-sampled PLY is written to
    out_dir/frame_<idx>/rep_<k>.ply and its measured density and byte size
    recorded.  Representations are ordered by decreasing density; the
    manifest is written last, to out_dir/manifest.mpd.  Identical inputs
    produce identical trees.
    """
    if not frame_files:
        raise ValueError("at least one frame file is required")
    if not ladder:
        raise ValueError("at least one ladder entry is required")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels = {spec.method for spec in ladder}
    label = labels.pop() if len(labels) == 1 else None

    frames = []
    for idx, path in enumerate(frame_files):
        cloud = read_ply(path)
        frame_dir = out / f"frame_{idx}"
        frame_dir.mkdir(exist_ok=True)
        reps = []
        for k, spec in enumerate(ladder, start=1):
            sub = _run_sampling(cloud, spec)
            data = save_ply(sub, encoding)
            name = f"rep_{k}.ply"
            (frame_dir / name).write_bytes(data)
            reps.append(Representation(
                id=f"rep_{k}", density=sub.size, size=len(data),
                segments=[Segment(id=f"rep_{k}", base_url=name,
                                  density=sub.size, size=len(data))]))
        reps.sort(key=lambda r: -r.density)
        densities = [r.density for r in reps]
        if len(set(densities)) != len(densities):
            raise ManifestError(
                f"ladder produces duplicate densities {densities} for "
                f"frame {idx}; representations must be distinguishable")
        frames.append(Frame(
            id=f"frame_{idx}", base_url=f"frame_{idx}/",
            adaptation_sets=[AdaptationSet(id=set_id, representations=reps,
                                           label=label)]))

    mpd = Mpd(frames=frames, encoding=ENCODING_NAMES[encoding])
    (out / MANIFEST_NAME).write_text(serialize_mpd(mpd), encoding="utf-8")
    return mpd


def verify_package(out_dir) -> int:
    """Check a packaged tree: every resolved URL must exist with the declared
    byte size and a PLY vertex count equal to the declared density.  Returns
    the number of media files checked."""
    from .core import parse_ply_header

    out = Path(out_dir)
    mpd = parse_mpd((out / MANIFEST_NAME).read_text(encoding="utf-8"))
    base = out.resolve().as_uri() + "/"
    checked = 0
    for frame in mpd.frames:
        for aset in frame.adaptation_sets:
            for rep in aset.representations:
                for seg in rep.segments:
                    url = resolve_url(mpd, frame.id, aset.id, rep.id, seg.id,
                                      base=base)
                    parsed = urlparse(url)
                    if parsed.scheme != "file":
                        raise ManifestError(
                            f"verification expects local media, got {url}")
                    path = Path(parsed.path)
                    if not path.is_file():
                        raise ManifestError(f"missing media file {path}")
                    actual = path.stat().st_size
                    if actual != seg.size:
                        raise ManifestError(
                            f"{path}: size {actual} != declared {seg.size}")
                    with open(path, "rb") as f:
                        header = parse_ply_header(f)
                    if header.vertex_count != seg.density:
                        raise ManifestError(
                            f"{path}: vertex count {header.vertex_count} != "
                            f"declared density {seg.density}")
                    checked += 1
    return checked
