"""Visual-acuity math: the pixel density a viewing setup demands, the point
density a cloud delivers, and the optimizer matching the two.

Normal adult vision resolves about 1 arc-minute (60 pixels per degree).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .core import BoundingBox, PointCloud
from .subsample import METHOD_STRIDE, SamplingSpec, subsample as _run_sampling

ARCMINUTE_RAD = math.radians(1.0 / 60.0)
_TAN_HALF_ARCMIN = math.tan(0.5 * ARCMINUTE_RAD)

DEFAULT_UNITS_PER_INCH = 40.0


@dataclass(frozen=True)
class ViewingGeometry:
    """Viewer and object placement driving density requirements.

    screen_distance_in   viewer-to-screen distance D, inches
    camera_distance_in   camera-to-object-center distance D', inches
    scale                model scale factor S, dimensionless
    units_per_inch       model-units per inch calibration
    """

    screen_distance_in: float
    camera_distance_in: float = 0.0
    scale: float = 1.0
    units_per_inch: float = DEFAULT_UNITS_PER_INCH

    def __post_init__(self) -> None:
        if not (self.screen_distance_in > 0):
            raise ValueError("screen distance must be positive")
        if self.camera_distance_in < 0:
            raise ValueError("camera distance must be non-negative")
        if not (self.scale > 0):
            raise ValueError("scale must be positive")
        if not (self.units_per_inch > 0):
            raise ValueError("units_per_inch must be positive")

    def with_viewport(self, camera_distance_in: float,
                      scale: float) -> "ViewingGeometry":
        return ViewingGeometry(self.screen_distance_in, camera_distance_in,
                               scale, self.units_per_inch)


def required_ppi(distance_in: float) -> float:
    """Minimum pixels per inch a screen needs at the given viewing distance
    before individual pixels become resolvable."""
    if not (distance_in > 0):
        raise ValueError("distance must be positive")
    return 1.0 / (2.0 * distance_in * _TAN_HALF_ARCMIN)


def required_ppi_scaled(geometry: ViewingGeometry) -> float:
    """Required density extended to a scaled object at a camera distance:
    S / (2 (D + D') tan(theta/2)).  Doubling S together with (D + D')
    leaves the requirement unchanged."""
    total = geometry.screen_distance_in + geometry.camera_distance_in
    return geometry.scale / (2.0 * total * _TAN_HALF_ARCMIN)


def effective_ppi(density: int, bbox: BoundingBox,
                  geometry: ViewingGeometry) -> float:
    """Linear point density a cloud delivers, in points per inch.

    Surface heuristic: captured figures are surfaces, so the points cover
    roughly half the bounding-box surface area, ab + bc + ca in square
    inches after scale and unit calibration; density over that area gives
    points per square inch, its square root points per inch.
    """
    if density < 1:
        raise ValueError("density must be at least 1")
    inches = bbox.extents * (geometry.scale / geometry.units_per_inch)
    a, b, c = float(inches[0]), float(inches[1]), float(inches[2])
    area = a * b + b * c + c * a
    if area <= 0:
        raise ValueError("bounding box is degenerate in every axis")
    return math.sqrt(density / area)


def acuity_satisfied(density: int, bbox: BoundingBox,
                     geometry: ViewingGeometry) -> bool:
    """Whether `density` points meet the acuity requirement for `geometry`.

    The scale factor multiplies the delivered side of the comparison (a
    scaled-up object needs proportionally more points and Eq-wise demands
    proportionally more pixels), so it cancels: the decision is invariant
    under (S, D + D') -> (kS, k(D + D')).
    """
    return (effective_ppi(density, bbox, geometry) * geometry.scale
            >= required_ppi_scaled(geometry))


@dataclass(frozen=True)
class DensityPlan:
    """Outcome of the density optimizer for one cloud and geometry."""

    keep: int
    ratio: Fraction
    required: float
    effective_full: float
    effective_chosen: float

    @property
    def unchanged(self) -> bool:
        return self.ratio == 1


def plan_density(cloud: PointCloud, geometry: ViewingGeometry,
                 density_oracle=None) -> DensityPlan:
    """Find the smallest density meeting the acuity requirement.

    `density_oracle(density, bbox, geometry) -> bool` may replace the
    default surface-heuristic comparison; it must be monotone in density.
    """
    if cloud.size == 0:
        raise ValueError("cannot plan density for an empty cloud")
    satisfied = density_oracle or acuity_satisfied
    bbox = cloud.bbox
    n = cloud.size
    required = required_ppi_scaled(geometry)
    eff_full = effective_ppi(n, bbox, geometry)
    if not satisfied(n, bbox, geometry):
        # Even the full cloud is below the requirement: leave it alone.
        return DensityPlan(n, Fraction(1), required, eff_full, eff_full)
    lo, hi = 1, n  # invariant: satisfied(hi), not satisfied(lo - 1)
    while lo < hi:
        mid = (lo + hi) // 2
        if satisfied(mid, bbox, geometry):
            hi = mid
        else:
            lo = mid + 1
    keep = lo
    return DensityPlan(keep, Fraction(n, keep), required, eff_full,
                       effective_ppi(keep, bbox, geometry))


def optimize_density(cloud: PointCloud, geometry: ViewingGeometry,
                     method: str = METHOD_STRIDE,
                     density_oracle=None) -> PointCloud:
    """Sub-sample a cloud to the smallest density meeting the acuity
    requirement; returns the cloud unchanged when it is already too sparse."""
    plan = plan_density(cloud, geometry, density_oracle)
    if plan.unchanged:
        return cloud
    spec = SamplingSpec(method=method, ratio=plan.ratio)
    return _run_sampling(cloud, spec)
