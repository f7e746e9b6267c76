import numpy as np
import pytest

from pcstream.core import BINARY, write_ply
from pcstream.manifest import (AdaptationSet, Frame, ManifestError, Mpd,
                               Representation, Segment, package, parse_mpd,
                               resolve_url, serialize_mpd, verify_package)
from pcstream.subsample import SamplingSpec, target_keep_count

from conftest import make_cloud


def minimal_mpd(**overrides) -> Mpd:
    seg = Segment(id="s0", base_url="rep_1.ply", density=100, size=1670)
    rep = Representation(id="rep_1", density=100, size=1670, segments=[seg])
    aset = AdaptationSet(id="set_0", representations=[rep])
    frame = Frame(id="frame_0", adaptation_sets=[aset], base_url="frame_0/")
    defaults = dict(frames=[frame], base_url="http://media.example/pc/")
    defaults.update(overrides)
    return Mpd(**defaults)


def random_mpd(rng: np.random.Generator) -> Mpd:
    def maybe(s):
        return s if rng.random() < 0.5 else None

    frames = []
    for fi in range(int(rng.integers(1, 5))):
        asets = []
        for ai in range(int(rng.integers(1, 4))):
            reps = []
            densities = sorted({int(d) for d in rng.integers(1, 10_000, 6)},
                               reverse=True)[:int(rng.integers(1, 5))]
            if not densities:
                densities = [17]
            sizes = sorted((d * 15 + 170 for d in densities), reverse=True)
            for ri, (dens, size) in enumerate(zip(densities, sizes)):
                nseg = int(rng.integers(1, 4))
                if nseg == 1:
                    segs = [Segment(id="g0", base_url=f"r{ri}.ply",
                                    density=dens, size=size)]
                else:
                    parts = np.full(nseg, dens // nseg)
                    parts[0] += dens - parts.sum()
                    if (parts <= 0).any():
                        nseg = 1
                        segs = [Segment(id="g0", base_url=f"r{ri}.ply",
                                        density=dens, size=size)]
                    else:
                        segs = [Segment(id=f"g{si}", base_url=f"r{ri}_{si}.ply",
                                        density=int(p), size=max(1, size // nseg))
                                for si, p in enumerate(parts)]
                reps.append(Representation(
                    id=f"r{ri}", density=dens, size=size,
                    base_url=maybe(f"rep{ri}/"), segments=segs))
            asets.append(AdaptationSet(
                id=f"a{ai}", representations=reps, base_url=maybe(f"set{ai}/"),
                label=maybe("alg1")))
        frames.append(Frame(id=f"f{fi}", adaptation_sets=asets,
                            base_url=maybe(f"frame{fi}/")))
    return Mpd(frames=frames,
               encoding="binary" if rng.random() < 0.5 else "ascii",
               type="dynamic" if rng.random() < 0.2 else "static",
               base_url=maybe("http://h.example/root/"))


class TestSerialize:
    def test_minimal_structure(self):
        xml = serialize_mpd(minimal_mpd())
        for tag in ("PointCloudMPD", "Frame", "AdaptationSet",
                    "Representation", "Segment", "BaseURL"):
            assert f"<{tag}" in xml or f"<{tag}>" in xml
        assert 'frames="1"' in xml
        assert 'type="static"' in xml

    def test_ladder_serialized_in_decreasing_density(self):
        reps = [Representation(id=f"rep_{k}", density=1000 // k,
                               size=15_000 // k + 170,
                               segments=[Segment(id="g", base_url=f"{k}.ply",
                                                 density=1000 // k,
                                                 size=15_000 // k + 170)])
                for k in range(1, 6)]
        mpd = minimal_mpd()
        mpd.frames[0].adaptation_sets[0].representations = reps
        xml = serialize_mpd(mpd)
        import re
        densities = [int(d) for d in re.findall(
            r'Representation id="[^"]+" density="(\d+)"', xml)]
        assert densities == sorted(densities, reverse=True)

    def test_invalid_ladder_rejected(self):
        mpd = minimal_mpd()
        rep = mpd.frames[0].adaptation_sets[0].representations[0]
        mpd.frames[0].adaptation_sets[0].representations = [rep, rep]
        with pytest.raises(ManifestError, match="duplicate representation"):
            serialize_mpd(mpd)

    def test_deterministic(self):
        assert serialize_mpd(minimal_mpd()) == serialize_mpd(minimal_mpd())


class TestParse:
    def test_roundtrip_minimal(self):
        m = minimal_mpd()
        assert parse_mpd(serialize_mpd(m)) == m

    def test_roundtrip_randomized(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            m = random_mpd(rng)
            assert parse_mpd(serialize_mpd(m)) == m

    def test_serialize_after_parse_is_identity_on_canonical_docs(self):
        rng = np.random.default_rng(43)
        for _ in range(20):
            doc = serialize_mpd(random_mpd(rng))
            assert serialize_mpd(parse_mpd(doc)) == doc

    def test_malformed_xml(self):
        with pytest.raises(ManifestError, match="malformed XML"):
            parse_mpd("<PointCloudMPD frames='1'")

    def test_missing_required_attribute(self):
        xml = serialize_mpd(minimal_mpd()).replace(' density="100"', "", 1)
        with pytest.raises(ManifestError, match="missing required attribute"):
            parse_mpd(xml)

    def test_frames_count_mismatch(self):
        xml = serialize_mpd(minimal_mpd()).replace('frames="1"', 'frames="2"')
        with pytest.raises(ManifestError, match="frames-count mismatch"):
            parse_mpd(xml)

    def test_duplicate_id(self):
        m = minimal_mpd()
        m.frames = [m.frames[0], m.frames[0]]
        xml_ok = serialize_mpd(minimal_mpd())
        frame_block = xml_ok[xml_ok.index("<Frame"):xml_ok.index("</Frame>") + 8]
        xml = xml_ok.replace(frame_block, frame_block + frame_block).replace(
            'frames="1"', 'frames="2"')
        with pytest.raises(ManifestError, match="duplicate frame id"):
            parse_mpd(xml)

    def test_unknown_elements_ignored_with_warning(self, caplog):
        xml = serialize_mpd(minimal_mpd()).replace(
            "<Frame", "<Mystery thing=\"1\"/><Frame", 1)
        with caplog.at_level("WARNING"):
            m = parse_mpd(xml)
        assert m == minimal_mpd()
        assert any("Mystery" in r.message for r in caplog.records)

    def test_label_roundtrip(self):
        m = minimal_mpd()
        m.frames[0].adaptation_sets[0].label = "alg2"
        assert parse_mpd(serialize_mpd(m)).frames[0].adaptation_sets[0].label == "alg2"


class TestResolveUrl:
    def test_root_plus_segment(self):
        m = minimal_mpd()
        m.frames[0].base_url = None
        m.frames[0].adaptation_sets[0].representations[0].segments[0].base_url = "f0/r1.ply"
        url = resolve_url(m, "frame_0", "set_0", "rep_1", "s0")
        assert url == "http://media.example/pc/f0/r1.ply"

    def test_intermediate_absolute_overrides(self):
        m = minimal_mpd()
        m.frames[0].base_url = "http://other.example/x/"
        url = resolve_url(m, "frame_0", "set_0", "rep_1", "s0")
        assert url == "http://other.example/x/rep_1.ply"

    def test_chained_relative_directories(self):
        m = minimal_mpd(base_url="http://h.example/pc/")
        m.frames[0].base_url = "a/"
        m.frames[0].adaptation_sets[0].base_url = "b/"
        m.frames[0].adaptation_sets[0].representations[0].base_url = None
        m.frames[0].adaptation_sets[0].representations[0].segments[0].base_url = "c.ply"
        assert resolve_url(m, "frame_0", "set_0", "rep_1", "s0") == \
            "http://h.example/pc/a/b/c.ply"

    def test_document_base_parameter(self):
        m = minimal_mpd(base_url=None)
        url = resolve_url(m, "frame_0", "set_0", "rep_1", "s0",
                          base="http://doc.example/live/manifest.mpd")
        assert url == "http://doc.example/live/frame_0/rep_1.ply"

    def test_unresolvable_without_absolute_root(self):
        m = minimal_mpd(base_url=None)
        with pytest.raises(ManifestError, match="unresolvable"):
            resolve_url(m, "frame_0", "set_0", "rep_1", "s0")

    def test_unknown_ids(self):
        m = minimal_mpd()
        with pytest.raises(ManifestError, match="unknown frame id"):
            resolve_url(m, "nope", "set_0", "rep_1", "s0")
        with pytest.raises(ManifestError, match="unknown representation id"):
            resolve_url(m, "frame_0", "set_0", "nope", "s0")


class TestPackage:
    def make_frames(self, rng, tmp_path, count, n=400):
        paths = []
        for i in range(count):
            p = tmp_path / f"src_{i:04d}.ply"
            write_ply(p, make_cloud(rng, n), BINARY)
            paths.append(p)
        return paths

    def test_counts_and_verification(self, rng, tmp_path):
        frames = self.make_frames(rng, tmp_path, 3)
        ladder = [SamplingSpec(ratio=r) for r in (1, 2, 5)]
        out = tmp_path / "media"
        mpd = package(frames, ladder, out)
        assert mpd.frame_count == 3
        assert len(list(out.glob("frame_*/rep_*.ply"))) == 9
        assert (out / "manifest.mpd").is_file()
        assert verify_package(out) == 9

    def test_ladder_identity_sizes_match_source(self, rng, tmp_path):
        frames = self.make_frames(rng, tmp_path, 2)
        out = tmp_path / "media"
        mpd = package(frames, [SamplingSpec(ratio=1)], out)
        for idx, frame in enumerate(mpd.frames):
            rep = frame.adaptation_sets[0].representations[0]
            assert rep.size == frames[idx].stat().st_size
            assert rep.density == 400

    def test_measured_densities(self, rng, tmp_path):
        frames = self.make_frames(rng, tmp_path, 1, n=401)
        mpd = package(frames, [SamplingSpec(ratio=r) for r in (1, 2)],
                      tmp_path / "m")
        reps = mpd.frames[0].adaptation_sets[0].representations
        assert [r.density for r in reps] == [401, target_keep_count(401, 2)]

    def test_idempotent(self, rng, tmp_path):
        frames = self.make_frames(rng, tmp_path, 2)
        ladder = [SamplingSpec(ratio=r) for r in (1, 3)]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        package(frames, ladder, out1)
        package(frames, ladder, out2)
        assert (out1 / "manifest.mpd").read_bytes() == \
            (out2 / "manifest.mpd").read_bytes()
        for p1 in sorted(out1.glob("frame_*/rep_*.ply")):
            p2 = out2 / p1.relative_to(out1)
            assert p1.read_bytes() == p2.read_bytes()

    def test_verification_catches_tampering(self, rng, tmp_path):
        frames = self.make_frames(rng, tmp_path, 1)
        out = tmp_path / "m"
        package(frames, [SamplingSpec(ratio=2)], out)
        victim = next(out.glob("frame_*/rep_*.ply"))
        victim.write_bytes(victim.read_bytes() + b"x")
        with pytest.raises(ManifestError, match="size"):
            verify_package(out)

    def test_half_ratio_size_ratio(self, rng, tmp_path):
        frames = self.make_frames(rng, tmp_path, 1, n=10_000)
        mpd = package(frames, [SamplingSpec(ratio=r) for r in (1, 2)],
                      tmp_path / "m")
        reps = mpd.frames[0].adaptation_sets[0].representations
        assert reps[1].size / reps[0].size == pytest.approx(0.5, abs=0.02)
