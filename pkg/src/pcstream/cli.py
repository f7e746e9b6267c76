"""Command-line entry point.

Subcommands: subsample, scale, optimize, package, serve, stream, psnr, info.
Exit codes: 0 ok, 2 usage, 3 input data, 4 network.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys
from pathlib import Path
from urllib.error import URLError

from . import acuity, client, manifest, metrics, server
from . import subsample as sampling
from .core import (ASCII, BINARY, PlyError, parse_ply_header, read_ply,
                   scale as scale_cloud, write_ply)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NETWORK = 4


class _UsageError(Exception):
    pass


def _parse_seq(value: str) -> tuple[str, int, int]:
    """Parse "<printf-pattern>:<start>:<count>" (pattern may contain colons)."""
    pattern, _, rest = value.rpartition(":")
    pattern, _, start_s = pattern.rpartition(":")
    if not pattern:
        raise _UsageError(
            f'bad --seq {value!r}: expected "<pattern>:<start>:<count>"')
    try:
        start, count = int(start_s), int(rest)
    except ValueError:
        raise _UsageError(f"bad --seq {value!r}: start/count must be integers")
    if count < 1:
        raise _UsageError("--seq count must be at least 1")
    try:
        pattern % start
    except (TypeError, ValueError):
        raise _UsageError(
            f"--seq pattern {pattern!r} must contain one integer placeholder")
    return pattern, start, count


def _input_files(args) -> list[Path]:
    """Input paths from --seq or the positional input; all must exist."""
    if getattr(args, "seq", None):
        pattern, start, count = _parse_seq(args.seq)
        paths = [Path(pattern % i) for i in range(start, start + count)]
    else:
        if not args.input:
            raise _UsageError("an input file or --seq is required")
        paths = [Path(args.input)]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"missing input file(s): {', '.join(missing)}")
    return paths


def _output_paths(args, inputs: list[Path]) -> list[Path]:
    """One output path per input: a file for single mode, a directory or
    printf pattern for sequence mode."""
    out = getattr(args, "out", None)
    if len(inputs) == 1:
        if out is None:
            raise _UsageError("--out is required")
        path = Path(out)
        if path.is_dir():
            return [path / inputs[0].name]
        return [path]
    if out is None:
        raise _UsageError("--out is required in sequence mode")
    if "%" in out:
        return [Path(out % i) for i in range(len(inputs))]
    base = Path(out)
    base.mkdir(parents=True, exist_ok=True)
    return [base / p.name for p in inputs]


def _sampling_spec(args) -> sampling.SamplingSpec:
    if (args.ratio is None) == (args.percentage is None):
        raise _UsageError("exactly one of --ratio/--percentage is required")
    return sampling.SamplingSpec(
        method=args.method, ratio=args.ratio, percentage=args.percentage,
        grid_resolution=args.grid, leaf_threshold=args.leaf,
        cluster_size=args.cluster)


def _io_encoding(path: Path, override: str | None) -> str:
    if override:
        return ASCII if override == "ascii" else BINARY
    with open(path, "rb") as f:
        return parse_ply_header(f).encoding


def cmd_subsample(args) -> int:
    spec = _sampling_spec(args)
    inputs = _input_files(args)
    outputs = _output_paths(args, inputs)
    total_in = total_out = 0
    for src, dst in zip(inputs, outputs):
        cloud = read_ply(src)
        out = sampling.subsample(cloud, spec)
        nbytes = write_ply(dst, out, _io_encoding(src, args.encoding))
        in_bytes = src.stat().st_size
        total_in += in_bytes
        total_out += nbytes
        print(f"{src} -> {dst}: points {cloud.size} -> {out.size}, "
              f"bytes {in_bytes} -> {nbytes}")
    if len(inputs) > 1:
        print(f"total: {len(inputs)} files, bytes {total_in} -> {total_out}")
    return EXIT_OK


def cmd_scale(args) -> int:
    factor = args.percentage / 100.0
    inputs = _input_files(args)
    outputs = _output_paths(args, inputs)
    for src, dst in zip(inputs, outputs):
        cloud = read_ply(src)
        out = scale_cloud(cloud, factor)
        write_ply(dst, out, _io_encoding(src, args.encoding))
        print(f"{src} -> {dst}: scaled by {factor:g}, "
              f"diagonal {cloud.bbox.diagonal:.6g} -> {out.bbox.diagonal:.6g}")
    return EXIT_OK


def _geometry(args) -> acuity.ViewingGeometry:
    return acuity.ViewingGeometry(
        screen_distance_in=args.distance,
        camera_distance_in=args.camera_distance,
        scale=args.scale,
        units_per_inch=args.units_per_inch)


def cmd_optimize(args) -> int:
    geometry = _geometry(args)
    inputs = _input_files(args)
    outputs = _output_paths(args, inputs)
    for src, dst in zip(inputs, outputs):
        cloud = read_ply(src)
        plan = acuity.plan_density(cloud, geometry)
        out = acuity.optimize_density(cloud, geometry, method=args.method)
        write_ply(dst, out, _io_encoding(src, args.encoding))
        print(f"{src} -> {dst}: kept {out.size}/{cloud.size} "
              f"(ratio {float(plan.ratio):.4g}), required_ppi="
              f"{plan.required:.4g}, effective_ppi {plan.effective_full:.4g}"
              f" -> {plan.effective_chosen:.4g}")
    return EXIT_OK


def cmd_package(args) -> int:
    inputs = _input_files(args)
    try:
        ratios = [float(r) if "." in r else int(r)
                  for r in args.ratios.split(",") if r]
    except ValueError:
        raise _UsageError(f"bad --ratios {args.ratios!r}")
    if not ratios:
        raise _UsageError("--ratios must name at least one ratio")
    ladder = [sampling.SamplingSpec(
        method=args.method, ratio=r, grid_resolution=args.grid,
        leaf_threshold=args.leaf, cluster_size=args.cluster) for r in ratios]
    encoding = BINARY if args.encoding != "ascii" else ASCII
    mpd = manifest.package(inputs, ladder, args.out, encoding=encoding)
    checked = manifest.verify_package(args.out)
    print(f"packaged {mpd.frame_count} frames x {len(ladder)} representations"
          f" -> {args.out} ({checked} media files verified)")
    return EXIT_OK


def cmd_serve(args) -> int:
    throttle = None
    if args.throttle:
        try:
            throttle = float(args.throttle)
        except ValueError:
            schedule_path = Path(args.throttle)
            if not schedule_path.is_file():
                raise _UsageError(
                    f"--throttle {args.throttle!r} is neither a rate nor a "
                    f"schedule file")
            entries = json.loads(schedule_path.read_text())
            throttle = [(float(t), float(bps)) for t, bps in entries]
    config = server.ServeConfig(
        root=Path(args.root), host=args.host, port=args.port,
        throttle=throttle,
        log_path=Path(args.log) if args.log else None,
        viewer_dir=Path(args.viewer) if args.viewer else None)
    srv = server.PointCloudServer(config)
    host, port = srv.address
    print(f"serving {args.root} at http://{host}:{port}/ (Ctrl-C stops)")
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        print("stopped")
    return EXIT_OK


def cmd_stream(args) -> int:
    geometry = _geometry(args)
    bridge_addr = None
    if args.bridge:
        host, _, port = args.bridge.rpartition(":")
        try:
            bridge_addr = (host or "127.0.0.1", int(port))
        except ValueError:
            raise _UsageError(f"bad --bridge address {args.bridge!r}")
    session = client.stream(
        args.mpd, geometry,
        log_path=args.log,
        alpha=args.alpha, safety=args.safety,
        buffer_frames=args.buffer, frame_interval=args.frame_interval,
        set_id=args.set, bridge_addr=bridge_addr)
    reps = session.representation_sequence()
    print(f"streamed {len(reps)} frames, {session.total_media_bytes()} media "
          f"bytes; representations: {' '.join(reps)}")
    return EXIT_OK


def cmd_psnr(args) -> int:
    ref = read_ply(Path(args.reference))
    deg = read_ply(Path(args.degraded))
    report = metrics.psnr_d1(ref, deg, peak=args.peak,
                             aggregation=args.aggregation)
    for line in report.lines():
        print(line)
    return EXIT_OK


def cmd_info(args) -> int:
    path = Path(args.input)
    with open(path, "rb") as f:
        header = parse_ply_header(f)
    print(f"file={path}")
    print(f"encoding={header.encoding}")
    print(f"vertices={header.vertex_count}")
    print(f"properties={','.join(name for name, _ in header.properties)}")
    print(f"bytes={path.stat().st_size}")
    if args.bbox and header.vertex_count:
        cloud = read_ply(path)
        lo, hi = cloud.bbox.lo, cloud.bbox.hi
        print(f"bbox_min={lo[0]:g},{lo[1]:g},{lo[2]:g}")
        print(f"bbox_max={hi[0]:g},{hi[1]:g},{hi[2]:g}")
        print(f"diagonal={cloud.bbox.diagonal:g}")
    return EXIT_OK


def _add_io_flags(p: argparse.ArgumentParser, with_method: bool = True) -> None:
    p.add_argument("input", nargs="?", help="input PLY file")
    p.add_argument("--seq", help='frame sequence "<pattern>:<start>:<count>", '
                                 'e.g. "frames/f_%%04d.ply:0:30"')
    p.add_argument("--out", help="output file, directory, or printf pattern")
    p.add_argument("--encoding", choices=["ascii", "binary"],
                   help="output encoding (default: match input)")
    if with_method:
        p.add_argument("--method", choices=list(sampling.METHODS),
                       default=sampling.METHOD_STRIDE,
                       help="sub-sampling method (default alg1)")
        p.add_argument("--grid", type=int, default=16,
                       help="density-tree base grid resolution (alg2)")
        p.add_argument("--leaf", type=int, default=64,
                       help="density-tree leaf occupancy bound (alg2)")
        p.add_argument("--cluster", type=int, default=None,
                       help="cluster size (alg3; default round(ratio))")


def _add_geometry_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--distance", type=float, required=True,
                   help="viewer-to-screen distance, inches")
    p.add_argument("--camera-distance", dest="camera_distance", type=float,
                   default=0.0, help="camera-to-object distance, inches")
    p.add_argument("--scale", type=float, default=1.0, help="model scale")
    p.add_argument("--units-per-inch", dest="units_per_inch", type=float,
                   default=acuity.DEFAULT_UNITS_PER_INCH,
                   help="model units per inch calibration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pcstream",
        description="Density-adaptive point cloud preparation and streaming")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("subsample", help="thin a cloud to a target density")
    _add_io_flags(p)
    p.add_argument("--ratio", type=float, default=None,
                   help="sub-sampling ratio R >= 1")
    p.add_argument("--percentage", type=float, default=None,
                   help="kept percentage in (0, 100]")
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("scale", help="scale a cloud about its center")
    _add_io_flags(p, with_method=False)
    p.add_argument("--percentage", type=float, required=True,
                   help="scale percentage (100 = unchanged)")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("optimize",
                       help="thin to the minimum density the viewing "
                            "geometry needs")
    _add_io_flags(p)
    _add_geometry_flags(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("package",
                       help="build a representation ladder and manifest")
    p.add_argument("input", nargs="?", help="single input PLY file")
    p.add_argument("--seq", help='frame sequence "<pattern>:<start>:<count>"')
    p.add_argument("--ratios", default="1,2,3,4,5",
                   help="comma-separated ladder ratios (default 1,2,3,4,5)")
    p.add_argument("--method", choices=list(sampling.METHODS),
                   default=sampling.METHOD_STRIDE)
    p.add_argument("--grid", type=int, default=16)
    p.add_argument("--leaf", type=int, default=64)
    p.add_argument("--cluster", type=int, default=None)
    p.add_argument("--encoding", choices=["ascii", "binary"],
                   default="binary")
    p.add_argument("--out", required=True, help="output media directory")
    p.set_defaults(func=cmd_package)

    p = sub.add_parser("serve", help="serve packaged media over HTTP")
    p.add_argument("--root", required=True, help="packaged media directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--throttle",
                   help="bytes/second cap, or a JSON schedule file "
                        "[[t_seconds, bps], ...]")
    p.add_argument("--log", help="access log path (JSON lines)")
    p.add_argument("--viewer", help="directory served under /viewer/")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("stream", help="play a manifest adaptively")
    p.add_argument("--mpd", required=True, help="manifest URL")
    _add_geometry_flags(p)
    p.add_argument("--alpha", type=float, default=client.DEFAULT_ALPHA,
                   help="throughput estimator smoothing")
    p.add_argument("--safety", type=float, default=client.DEFAULT_SAFETY,
                   help="bandwidth budget safety factor")
    p.add_argument("--buffer", type=int,
                   default=client.DEFAULT_BUFFER_FRAMES,
                   help="lookahead buffer, frames")
    p.add_argument("--frame-interval", dest="frame_interval", type=float,
                   default=client.DEFAULT_FRAME_INTERVAL,
                   help="target seconds per frame")
    p.add_argument("--set", default=None,
                   help="adaptation set id (default: first)")
    p.add_argument("--bridge", help="viewer bridge listen address host:port")
    p.add_argument("--log", help="session log path (JSON lines)")
    p.set_defaults(func=cmd_stream)

    p = sub.add_parser("psnr", help="point-to-point geometry quality")
    p.add_argument("reference")
    p.add_argument("degraded")
    p.add_argument("--peak", type=float, default=None,
                   help="peak value (default: reference bbox diagonal)")
    p.add_argument("--aggregation", choices=["max", "mean"], default="max")
    p.set_defaults(func=cmd_psnr)

    p = sub.add_parser("info", help="inspect a PLY header")
    p.add_argument("input")
    p.add_argument("--bbox", action="store_true",
                   help="also load the cloud and report its bounds")
    p.set_defaults(func=cmd_info)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PlyError, manifest.ManifestError, FileNotFoundError,
            ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (client.ClientError, URLError, ConnectionError, socket.timeout,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NETWORK


if __name__ == "__main__":
    sys.exit(main())
