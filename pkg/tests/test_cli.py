import json

import pytest

from pcstream.cli import main
from pcstream.core import BINARY, read_ply, write_ply
from pcstream.subsample import target_keep_count

from conftest import make_cloud


@pytest.fixture
def src_ply(rng, tmp_path):
    path = tmp_path / "cloud.ply"
    write_ply(path, make_cloud(rng, 1001), BINARY)
    return path


@pytest.fixture
def frame_seq(rng, tmp_path):
    for i in range(4):
        write_ply(tmp_path / f"f_{i:04d}.ply", make_cloud(rng, 300), BINARY)
    return f"{tmp_path}/f_%04d.ply:0:4"


class TestSubsample:
    def test_percentage_hundred_identity_density(self, src_ply, tmp_path,
                                                  capsys):
        out = tmp_path / "out.ply"
        assert main(["subsample", str(src_ply), "--percentage", "100",
                     "--out", str(out)]) == 0
        assert read_ply(out).size == 1001
        assert "points 1001 -> 1001" in capsys.readouterr().out

    def test_percentage_fifty_ceil_rule(self, src_ply, tmp_path):
        out = tmp_path / "half.ply"
        assert main(["subsample", str(src_ply), "--percentage", "50",
                     "--out", str(out)]) == 0
        assert read_ply(out).size == 501

    def test_ratio_with_method(self, src_ply, tmp_path):
        for method in ("alg1", "alg2", "alg3"):
            out = tmp_path / f"{method}.ply"
            assert main(["subsample", str(src_ply), "--ratio", "7",
                         "--method", method, "--out", str(out)]) == 0
            assert read_ply(out).size == target_keep_count(1001, 7)

    def test_iterative_over_sequence(self, frame_seq, tmp_path, capsys):
        out_dir = tmp_path / "thinned"
        assert main(["subsample", "--seq", frame_seq, "--ratio", "3",
                     "--out", str(out_dir)]) == 0
        outs = sorted(out_dir.glob("*.ply"))
        assert len(outs) == 4
        assert all(read_ply(p).size == 100 for p in outs)
        assert "total: 4 files" in capsys.readouterr().out

    def test_iterative_matches_single(self, frame_seq, tmp_path):
        pattern = frame_seq.split(":")[0]
        seq_dir = tmp_path / "seq_out"
        assert main(["subsample", "--seq", frame_seq, "--ratio", "2",
                     "--out", str(seq_dir)]) == 0
        single = tmp_path / "single.ply"
        assert main(["subsample", pattern % 2, "--ratio", "2",
                     "--out", str(single)]) == 0
        assert single.read_bytes() == (seq_dir / "f_0002.ply").read_bytes()

    def test_usage_errors(self, src_ply, tmp_path):
        out = str(tmp_path / "x.ply")
        assert main(["subsample", str(src_ply), "--out", out]) == 2
        assert main(["subsample", str(src_ply), "--ratio", "2",
                     "--percentage", "50", "--out", out]) == 2

    def test_missing_input_is_data_error(self, tmp_path):
        assert main(["subsample", str(tmp_path / "nope.ply"), "--ratio", "2",
                     "--out", str(tmp_path / "o.ply")]) == 3

    def test_missing_sequence_frame(self, frame_seq, tmp_path):
        bad = frame_seq.replace(":0:4", ":0:9")
        assert main(["subsample", "--seq", bad, "--ratio", "2",
                     "--out", str(tmp_path / "d")]) == 3


class TestScale:
    def test_identity(self, src_ply, tmp_path):
        out = tmp_path / "s.ply"
        assert main(["scale", str(src_ply), "--percentage", "100",
                     "--out", str(out)]) == 0
        assert read_ply(out) == read_ply(src_ply)

    def test_double_diagonal(self, src_ply, tmp_path):
        out = tmp_path / "d.ply"
        assert main(["scale", str(src_ply), "--percentage", "200",
                     "--out", str(out)]) == 0
        assert read_ply(out).bbox.diagonal == pytest.approx(
            2 * read_ply(src_ply).bbox.diagonal, rel=1e-6)


class TestOptimize:
    def test_sparse_cloud_kept(self, src_ply, tmp_path, capsys):
        out = tmp_path / "o.ply"
        assert main(["optimize", str(src_ply), "--distance", "20",
                     "--units-per-inch", "1", "--out", str(out)]) == 0
        assert read_ply(out).size == 1001
        assert "required_ppi" in capsys.readouterr().out

    def test_far_viewing_thins_more(self, rng, tmp_path):
        src = tmp_path / "dense.ply"
        write_ply(src, make_cloud(rng, 20_000, span=1.0), BINARY)
        near, far = tmp_path / "near.ply", tmp_path / "far.ply"
        base = ["optimize", str(src), "--units-per-inch", "1",
                "--distance", "20"]
        assert main(base + ["--camera-distance", "500", "--out",
                            str(near)]) == 0
        assert main(base + ["--camera-distance", "2000", "--out",
                            str(far)]) == 0
        assert read_ply(far).size < read_ply(near).size <= 20_000

    def test_joint_scaling_invariant_bytes(self, rng, tmp_path):
        src = tmp_path / "dense.ply"
        write_ply(src, make_cloud(rng, 5_000, span=1.0), BINARY)
        a, b = tmp_path / "a.ply", tmp_path / "b.ply"
        assert main(["optimize", str(src), "--units-per-inch", "1",
                     "--distance", "20", "--camera-distance", "480",
                     "--scale", "1", "--out", str(a)]) == 0
        # double S and (D + D'): 20 + 980 = 2 * (20 + 480)
        assert main(["optimize", str(src), "--units-per-inch", "1",
                     "--distance", "20", "--camera-distance", "980",
                     "--scale", "2", "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestPackageInfoPsnr:
    def test_package_counts(self, frame_seq, tmp_path, capsys):
        out = tmp_path / "media"
        assert main(["package", "--seq", frame_seq.replace(":0:4", ":0:2"),
                     "--ratios", "1,2", "--out", str(out)]) == 0
        assert len(list(out.glob("frame_*/rep_*.ply"))) == 4
        assert (out / "manifest.mpd").is_file()
        assert "verified" in capsys.readouterr().out

    def test_psnr_self_is_inf(self, src_ply, capsys):
        assert main(["psnr", str(src_ply), str(src_ply)]) == 0
        assert "psnr_db=inf" in capsys.readouterr().out

    def test_psnr_with_peak(self, rng, src_ply, tmp_path, capsys):
        deg = tmp_path / "deg.ply"
        main(["subsample", str(src_ply), "--ratio", "4", "--out", str(deg)])
        capsys.readouterr()
        assert main(["psnr", str(src_ply), str(deg), "--peak", "1023"]) == 0
        out = capsys.readouterr().out
        assert "psnr_db=" in out and "mse_sym=" in out

    def test_info(self, src_ply, capsys):
        assert main(["info", str(src_ply), "--bbox"]) == 0
        out = capsys.readouterr().out
        assert "vertices=1001" in out
        assert "encoding=binary_little_endian" in out
        assert "bbox_min=" in out

    def test_info_malformed(self, tmp_path):
        bad = tmp_path / "bad.ply"
        bad.write_bytes(b"not a ply at all")
        assert main(["info", str(bad)]) == 3


class TestServeStream:
    def test_end_to_end_loopback(self, rng, tmp_path, capsys):
        for i in range(3):
            write_ply(tmp_path / f"f_{i}.ply", make_cloud(rng, 800), BINARY)
        media = tmp_path / "media"
        assert main(["package", "--seq", f"{tmp_path}/f_%d.ply:0:3",
                     "--ratios", "1,2", "--out", str(media)]) == 0
        capsys.readouterr()

        from pcstream.server import ServeConfig, serve
        log_path = tmp_path / "session.jsonl"
        with serve(ServeConfig(root=media)) as srv:
            assert main(["stream", "--mpd", srv.url + "manifest.mpd",
                         "--distance", "20", "--units-per-inch", "1",
                         "--frame-interval", "0.02",
                         "--log", str(log_path)]) == 0
        out = capsys.readouterr().out
        assert "streamed 3 frames" in out
        records = [json.loads(l) for l in log_path.read_text().splitlines()]
        assert len(records) == 4  # header + 3 frames

    def test_stream_unreachable_is_network_error(self, capsys):
        assert main(["stream", "--mpd", "http://127.0.0.1:9/manifest.mpd",
                     "--distance", "20"]) == 4
