"""Density-adaptive point cloud streaming toolkit."""

from .core import (ASCII, BINARY, BoundingBox, PlyError, Point, PointCloud,
                   load_ply, read_ply, save_ply, scale, sort_spatial,
                   write_ply)
from .subsample import (SamplingSpec, build_density_tree, cluster_subsample,
                        stride_subsample, target_keep_count, tree_subsample)
from .acuity import (ViewingGeometry, effective_ppi, optimize_density,
                     required_ppi, required_ppi_scaled)
from .manifest import (AdaptationSet, Frame, ManifestError, Mpd,
                       Representation, Segment, package, parse_mpd,
                       resolve_url, serialize_mpd, verify_package)
from .metrics import BandwidthStat, PsnrReport, bandwidth_saving, psnr_d1
from .server import ServeConfig, serve
from .client import (ClientError, SessionLog, ThroughputEstimator,
                     select_representation, stream)

__version__ = "0.1.0"

__all__ = [
    "ASCII", "BINARY", "AdaptationSet", "BandwidthStat", "BoundingBox",
    "ClientError", "Frame", "ManifestError", "Mpd", "PlyError", "Point",
    "PointCloud", "PsnrReport", "Representation", "SamplingSpec", "Segment",
    "ServeConfig", "SessionLog", "ThroughputEstimator", "ViewingGeometry",
    "bandwidth_saving", "build_density_tree", "cluster_subsample",
    "effective_ppi", "load_ply", "optimize_density", "package", "parse_mpd",
    "psnr_d1", "read_ply", "required_ppi", "required_ppi_scaled",
    "resolve_url", "save_ply", "scale", "select_representation",
    "serialize_mpd", "serve", "sort_spatial", "stream", "stride_subsample",
    "subsample", "target_keep_count", "tree_subsample", "verify_package",
    "write_ply",
]  # "subsample" names the submodule; its dispatcher is subsample.subsample
