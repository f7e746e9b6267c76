"""Deterministic spatial sub-sampling.

Three methods, all producing exactly ceil(n / R) points for any ratio R >= 1:

* ``alg1`` - sort the cloud spatially and keep a uniform stride.
* ``alg2`` - bucket points into a density tree (voxel histogram recursively
  split into octants) and stride-thin leaf by leaf, deepest leaves first.
* ``alg3`` - build a complete octree, walk its leaves deepest-first, cluster
  each point with its nearest unprocessed neighbors and keep the spatial
  middle of each cluster.

Every method is a pure function of its inputs: identical input yields
byte-identical PLY output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .core import BoundingBox, PointCloud, spatial_order

try:  # compiled sweep kernel; the pure-Python path is kept as fallback
    from numba import njit as _njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(fn):
            return fn
        return wrap

METHOD_STRIDE = "alg1"
METHOD_TREE = "alg2"
METHOD_CLUSTER = "alg3"
METHODS = (METHOD_STRIDE, METHOD_TREE, METHOD_CLUSTER)

# Octant splitting happens on a virtual dyadic grid this many levels deep.
# Beyond it a leaf may exceed its occupancy bound (duplicate coordinates
# would otherwise recurse forever).
MAX_SPLIT_DEPTH = 21
_SUB_CELLS = 1 << MAX_SPLIT_DEPTH

# Below this many live points, nearest-neighbor queries fall back to plain
# vectorized scans instead of a k-d tree.
_BRUTE_THRESHOLD = 64
# Relative slack when comparing candidate distances; pairs closer than this
# are re-ranked with the exact tie-break key.
_TIE_EPS = 1e-12


def _as_ratio(ratio) -> Fraction:
    if isinstance(ratio, Fraction):
        r = ratio
    elif isinstance(ratio, (int, np.integer)):
        r = Fraction(int(ratio))
    elif isinstance(ratio, float):
        if not math.isfinite(ratio):
            raise ValueError("sub-sampling ratio must be finite")
        r = Fraction(ratio)
    else:
        raise TypeError(f"ratio must be a number, got {type(ratio).__name__}")
    if r < 1:
        raise ValueError("sub-sampling ratio must be >= 1")
    return r


def target_keep_count(n: int, ratio) -> int:
    """Exact ceil(n / R); the same keep rule for all three methods."""
    if n < 0:
        raise ValueError("point count must be non-negative")
    r = _as_ratio(ratio)
    if n == 0:
        return 0
    return -((-n * r.denominator) // r.numerator)


def _ceil_div_frac(n: int, r: Fraction) -> int:
    return -((-n * r.denominator) // r.numerator)


def _stride_positions(count: int, r: Fraction) -> list[int]:
    """Kept positions floor(j*R) for j = 0..ceil(count/R)-1."""
    keep = _ceil_div_frac(count, r)
    num, den = r.numerator, r.denominator
    return [(j * num) // den for j in range(keep)]


def _uniform_pick(count: int, keep: int) -> list[int]:
    """`keep` evenly spread positions out of `count` (floor(j*count/keep))."""
    return [(j * count) // keep for j in range(keep)]


@dataclass(frozen=True)
class SamplingSpec:
    """Parameters of one sub-sampling pass.

    Exactly one of `ratio` (R >= 1) or `percentage` (kept fraction in
    (0, 100]) must be given; a percentage maps to the exact ratio 100/p.
    """

    method: str = METHOD_STRIDE
    ratio: int | float | Fraction | None = None
    percentage: int | float | None = None
    grid_resolution: int = 16
    leaf_threshold: int = 64
    cluster_size: int | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if (self.ratio is None) == (self.percentage is None):
            raise ValueError("exactly one of ratio/percentage must be set")
        if self.percentage is not None and not (0 < self.percentage <= 100):
            raise ValueError("percentage must be in (0, 100]")
        if self.ratio is not None:
            _as_ratio(self.ratio)
        if self.grid_resolution < 1:
            raise ValueError("grid_resolution must be >= 1")
        if self.leaf_threshold < 1:
            raise ValueError("leaf_threshold must be >= 1")
        if self.cluster_size is not None and self.cluster_size < 2:
            raise ValueError("cluster_size must be >= 2")

    @property
    def exact_ratio(self) -> Fraction:
        if self.ratio is not None:
            return _as_ratio(self.ratio)
        return Fraction(100) / Fraction(self.percentage)

    @property
    def effective_cluster_size(self) -> int:
        if self.cluster_size is not None:
            return self.cluster_size
        r = self.exact_ratio
        return max(2, int(r + Fraction(1, 2)))  # round half up


# ---------------------------------------------------------------------------
# Virtual dyadic grid keys


_M32 = np.uint64(0x1F00000000FFFF)
_M16 = np.uint64(0x1F0000FF0000FF)
_M8 = np.uint64(0x100F00F00F00F00F)
_M4 = np.uint64(0x10C30C30C30C30C3)
_M2 = np.uint64(0x1249249249249249)


def _spread3(v: np.ndarray) -> np.ndarray:
    """Spread 21-bit integers so their bits land every third position."""
    v = v.astype(np.uint64)
    v = (v | (v << np.uint64(32))) & _M32
    v = (v | (v << np.uint64(16))) & _M16
    v = (v | (v << np.uint64(8))) & _M8
    v = (v | (v << np.uint64(4))) & _M4
    v = (v | (v << np.uint64(2))) & _M2
    return v


def _grid_keys(positions: np.ndarray, bbox: BoundingBox,
               grid: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-point (level-0 cell index, octant path code).

    The level-0 index is the row-major (x, y, z) cell of a grid^3 histogram
    over the bounding box: clamp(floor(grid * (v - lo) / extent), 0, grid-1),
    with a degenerate axis mapping to cell 0.  The path code interleaves the
    per-axis positions within the level-0 cell at MAX_SPLIT_DEPTH dyadic
    levels, x in the highest bit of each 3-bit group, so that consecutive
    3-bit groups name the octant at each split depth.
    """
    n = positions.shape[0]
    lo = bbox.lo
    ext = bbox.extents
    cells = np.zeros((n, 3), dtype=np.int64)
    subs = np.zeros((n, 3), dtype=np.uint64)
    for a in range(3):
        if ext[a] > 0:
            t = (positions[:, a] - lo[a]) / ext[a]
            s = t * grid
            c = np.clip(np.floor(s).astype(np.int64), 0, grid - 1)
            frac = np.clip(s - c, 0.0, 1.0)
            subs[:, a] = np.clip((frac * _SUB_CELLS).astype(np.int64),
                                 0, _SUB_CELLS - 1).astype(np.uint64)
            cells[:, a] = c
    flat = (cells[:, 0] * grid + cells[:, 1]) * grid + cells[:, 2]
    path = ((_spread3(subs[:, 0]) << np.uint64(2))
            | (_spread3(subs[:, 1]) << np.uint64(1))
            | _spread3(subs[:, 2]))
    return flat, path


class _LeafLayout(NamedTuple):
    """Flattened leaf decomposition of a cloud.

    order       original point indices, grouped leaf by leaf in visit order
                (deepest depth first, then left-most), spatially sorted
                within each leaf
    leaf_starts offset of each leaf's run inside `order` (visit order)
    leaf_sizes  occupancy of each leaf (visit order)
    leaf_depths split depth of each leaf (visit order; level-0 cells are 0)
    """

    order: np.ndarray
    leaf_starts: np.ndarray
    leaf_sizes: np.ndarray
    leaf_depths: np.ndarray


def _leaf_layout(positions: np.ndarray, bbox: BoundingBox, grid: int,
                 leaf_threshold: int) -> _LeafLayout:
    n = positions.shape[0]
    flat, path = _grid_keys(positions, bbox, grid)
    order0 = np.lexsort((path, flat))
    f = flat[order0]
    p = path[order0]

    base_bound = np.empty(n, dtype=bool)
    base_bound[0] = True
    base_bound[1:] = f[1:] != f[:-1]

    depth = np.full(n, -1, dtype=np.int64)
    start = np.full(n, -1, dtype=np.int64)
    undecided = np.ones(n, dtype=bool)
    for d in range(MAX_SPLIT_DEPTH + 1):
        if d == 0:
            bound = base_bound.copy()
        else:
            shift = np.uint64(3 * (MAX_SPLIT_DEPTH - d))
            pref = p >> shift
            bound = base_bound.copy()
            bound[1:] |= pref[1:] != pref[:-1]
        run_starts = np.flatnonzero(bound)
        counts = np.diff(np.append(run_starts, n))
        per_start = np.repeat(run_starts, counts)
        per_len = np.repeat(counts, counts)
        newly = undecided & ((per_len <= leaf_threshold) | (d == MAX_SPLIT_DEPTH))
        depth[newly] = d
        start[newly] = per_start[newly]
        undecided &= ~newly
        if not undecided.any():
            break

    leaf_first = np.flatnonzero(start == np.arange(n))
    leaf_sizes0 = np.diff(np.append(leaf_first, n))
    leaf_depths0 = depth[leaf_first]

    # Visit order: deepest first; same depth in positional (left-most) order.
    rank_order = np.lexsort((leaf_first, -leaf_depths0))
    visit_rank_of_leaf = np.empty(len(leaf_first), dtype=np.int64)
    visit_rank_of_leaf[rank_order] = np.arange(len(leaf_first))
    leaf_index_per_point = np.searchsorted(leaf_first, start)
    visit_rank = visit_rank_of_leaf[leaf_index_per_point]

    orig = order0
    xs = positions[orig, 0]
    ys = positions[orig, 1]
    zs = positions[orig, 2]
    final = np.lexsort((orig, xs, ys, zs, visit_rank))
    order = orig[final]

    leaf_sizes = leaf_sizes0[rank_order]
    leaf_depths = leaf_depths0[rank_order]
    leaf_starts = np.concatenate(([0], np.cumsum(leaf_sizes)[:-1]))
    return _LeafLayout(order, leaf_starts, leaf_sizes, leaf_depths)


# ---------------------------------------------------------------------------
# Explicit density tree (inspection/verification structure)


@dataclass
class TreeNode:
    """One cell of a density tree."""

    lo: np.ndarray
    hi: np.ndarray
    depth: int
    indices: np.ndarray | None = None        # leaves only, original indices
    children: list["TreeNode"] | None = None  # internal nodes, octant order

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    @property
    def count(self) -> int:
        if self.is_leaf:
            return len(self.indices)
        return sum(c.count for c in self.children)


@dataclass
class DensityTree:
    """Voxel histogram over the bounding box, over-full cells split into
    octants until each leaf holds at most `leaf_threshold` points (or the
    depth cap is hit).  With grid_resolution=1 and leaf_threshold=1 this is
    a complete octree."""

    bbox: BoundingBox
    grid_resolution: int
    leaf_threshold: int
    count: int
    cells: list[TreeNode]  # non-empty level-0 cells, row-major (x, y, z)

    def leaves(self) -> Iterator[TreeNode]:
        """All leaves in depth-first order."""
        stack = list(reversed(self.cells))
        while stack:
            node = stack.pop()
            if node.is_leaf:
                yield node
            else:
                stack.extend(reversed(node.children))

    def visit_leaves(self) -> list[TreeNode]:
        """Leaves in processing order: deepest first, left-most within a
        depth."""
        ordered = list(self.leaves())
        ranked = sorted(range(len(ordered)),
                        key=lambda i: (-ordered[i].depth, i))
        return [ordered[i] for i in ranked]


def build_density_tree(cloud: PointCloud, grid_resolution: int = 16,
                       leaf_threshold: int = 64) -> DensityTree:
    """Build the explicit tree for a cloud.

    Every input point index lands in exactly one leaf; each leaf holds at
    most `leaf_threshold` points unless the depth cap forced a larger leaf.
    """
    if cloud.size == 0:
        raise ValueError("cannot build a density tree over an empty cloud")
    if grid_resolution < 1 or leaf_threshold < 1:
        raise ValueError("grid_resolution and leaf_threshold must be >= 1")
    positions = cloud.positions
    bbox = cloud.bbox
    n = cloud.size
    grid = grid_resolution
    flat, path = _grid_keys(positions, bbox, grid)
    order0 = np.lexsort((path, flat))
    f = flat[order0]
    p = path[order0]

    def make_node(i0: int, i1: int, depth: int, lo: np.ndarray,
                  hi: np.ndarray) -> TreeNode:
        count = i1 - i0
        if count <= leaf_threshold or depth == MAX_SPLIT_DEPTH:
            return TreeNode(lo, hi, depth, indices=order0[i0:i1].copy())
        shift = np.uint64(3 * (MAX_SPLIT_DEPTH - depth - 1))
        octants = (p[i0:i1] >> shift) & np.uint64(7)
        mid = 0.5 * (lo + hi)
        children = []
        j0 = i0
        while j0 < i1:
            oct_id = int(octants[j0 - i0])
            j1 = i0 + int(np.searchsorted(octants, oct_id, side="right"))
            clo = lo.copy()
            chi = hi.copy()
            for a, bit in ((0, 4), (1, 2), (2, 1)):
                if oct_id & bit:
                    clo[a] = mid[a]
                else:
                    chi[a] = mid[a]
            children.append(make_node(j0, j1, depth + 1, clo, chi))
            j0 = j1
        return TreeNode(lo, hi, depth, children=children)

    ext = bbox.extents
    cells = []
    starts = np.flatnonzero(np.concatenate(([True], f[1:] != f[:-1])))
    ends = np.append(starts[1:], n)
    for i0, i1 in zip(starts, ends):
        cell = int(f[i0])
        iz = cell % grid
        iy = (cell // grid) % grid
        ix = cell // (grid * grid)
        lo = bbox.lo + ext * (np.array([ix, iy, iz]) / grid)
        hi = bbox.lo + ext * (np.array([ix + 1, iy + 1, iz + 1]) / grid)
        cells.append(make_node(int(i0), int(i1), 0, lo, hi))
    return DensityTree(bbox, grid, leaf_threshold, n, cells)


# ---------------------------------------------------------------------------
# Method 1: spatial sort + uniform stride


def stride_subsample(cloud: PointCloud, ratio) -> PointCloud:
    """Keep points at sorted positions floor(j*R); exactly ceil(n/R) points."""
    if cloud.size == 0:
        raise ValueError("cannot sub-sample an empty cloud")
    r = _as_ratio(ratio)
    order = cloud._cache.get("spatial_order")
    if order is None:
        order = spatial_order(cloud.positions)
        cloud._cache["spatial_order"] = order
    keep = _ceil_div_frac(cloud.size, r)
    if r.denominator == 1:
        picks = np.arange(keep, dtype=np.intp) * r.numerator
    else:
        picks = np.array(_stride_positions(cloud.size, r), dtype=np.intp)
    return cloud.take(order[picks])


# ---------------------------------------------------------------------------
# Method 2: density-tree stride


def tree_subsample(cloud: PointCloud, ratio, grid_resolution: int = 16,
                   leaf_threshold: int = 64) -> PointCloud:
    """Stride-thin leaves of a density tree, deepest leaves first.

    Each visited leaf keeps ceil(occupancy/R) points at a uniform stride over
    its spatially sorted points; visiting stops as soon as the global removal
    budget n - ceil(n/R) is met, with the boundary leaf clamped so the total
    lands exactly.  If a full pass cannot meet the budget (many small leaves
    each keeping at least one point), surviving points are then drained whole
    leaf by whole leaf, deepest first, again clamping the boundary leaf.
    """
    n = cloud.size
    if n == 0:
        raise ValueError("cannot sub-sample an empty cloud")
    if grid_resolution < 1 or leaf_threshold < 1:
        raise ValueError("grid_resolution and leaf_threshold must be >= 1")
    r = _as_ratio(ratio)
    keep_target = _ceil_div_frac(n, r)
    budget = n - keep_target
    layout = _cached_layout(cloud, grid_resolution, leaf_threshold)
    if budget == 0:
        return cloud.take(layout.order)

    sizes = layout.leaf_sizes
    starts = layout.leaf_starts
    uniq, inverse = np.unique(sizes, return_inverse=True)
    keep_of = {int(s): _ceil_div_frac(int(s), r) for s in uniq}
    keeps = np.array([keep_of[int(s)] for s in uniq], dtype=np.int64)[inverse]
    removals = sizes - keeps
    cum = np.cumsum(removals)

    mask = np.ones(n, dtype=bool)
    nleaves = len(sizes)
    full = int(np.searchsorted(cum, budget, side="right"))  # fully strided

    # Stride the fully processed leaves, grouped by occupancy.
    if full:
        strided_sizes = sizes[:full]
        strided_starts = starts[:full]
        for s in np.unique(strided_sizes):
            s_int = int(s)
            kept_pos = np.array(_stride_positions(s_int, r), dtype=np.int64)
            drop_pos = np.setdiff1d(np.arange(s_int), kept_pos,
                                    assume_unique=True)
            if drop_pos.size == 0:
                continue
            grp = strided_starts[strided_sizes == s]
            mask[(grp[:, None] + drop_pos[None, :]).ravel()] = False

    removed = int(cum[full - 1]) if full else 0
    if full < nleaves and removed < budget:
        # Boundary leaf: clamp its removals so the global count is exact.
        l_size = int(sizes[full])
        l_start = int(starts[full])
        keep_here = l_size - (budget - removed)
        kept_pos = np.array(_uniform_pick(l_size, keep_here), dtype=np.int64)
        drop = np.ones(l_size, dtype=bool)
        drop[kept_pos] = False
        mask[l_start + np.flatnonzero(drop)] = False
        removed = budget

    if removed < budget:
        # Drain whole leaves' survivors, deepest first.
        need = budget - removed
        cum_kept = np.cumsum(keeps)
        drained = int(np.searchsorted(cum_kept, need, side="right"))
        for li in range(drained):
            seg = mask[starts[li]:starts[li] + sizes[li]]
            seg[:] = False
        done = int(cum_kept[drained - 1]) if drained else 0
        if done < need:
            li = drained
            seg_idx = starts[li] + np.flatnonzero(
                mask[starts[li]:starts[li] + sizes[li]])
            k_here = len(seg_idx) - (need - done)
            keep_sub = np.array(_uniform_pick(len(seg_idx), k_here),
                                dtype=np.int64) if k_here else np.array([], dtype=np.int64)
            drop = np.ones(len(seg_idx), dtype=bool)
            drop[keep_sub] = False
            mask[seg_idx[drop]] = False

    result = cloud.take(layout.order[mask])
    assert result.size == keep_target
    return result


def _cached_layout(cloud: PointCloud, grid: int, leaf_threshold: int) -> _LeafLayout:
    key = ("layout", grid, leaf_threshold)
    got = cloud._cache.get(key)
    if got is None:
        got = _leaf_layout(cloud.positions, cloud.bbox, grid, leaf_threshold)
        cloud._cache[key] = got
    return got


# ---------------------------------------------------------------------------
# Method 3: octree-guided nearest-neighbor clusters


def _rank_neighbors(pos_v: np.ndarray, spatial_rank: np.ndarray, seed: int,
                    pool: np.ndarray, need: int) -> list[int]:
    """Top `need` of `pool` by (squared distance to seed, z, y, x, index).

    spatial_rank encodes the (z, y, x, original index) total order as a
    single integer per point, so ties in squared distance resolve exactly.
    """
    diffs = pos_v[pool] - pos_v[seed]
    d2 = (diffs * diffs).sum(axis=1)
    m = len(pool)
    if m > need:
        part = np.argpartition(d2, need - 1)[:need]
        thresh = d2[part].max()
        cand = np.flatnonzero(d2 <= thresh)
        pool = pool[cand]
        d2 = d2[cand]
    order = np.lexsort((spatial_rank[pool], d2))
    return pool[order[:need]].tolist()


def cluster_subsample(cloud: PointCloud, ratio, cluster_size: int | None = None,
                      *, stats_out: dict | None = None) -> PointCloud:
    """Cluster octree leaves with their nearest unprocessed neighbors and keep
    each cluster's spatial middle.

    Leaves of a complete octree (depth-capped; co-located points share a cap
    leaf and form a ready-made cluster) are visited deepest first.  Each
    unprocessed point gathers its cluster_size-1 nearest unprocessed
    neighbors (Euclidean, ties by (z, y, x, original index)); the cluster is
    sorted spatially and only its middle point survives.  Processing stops
    exactly at the removal budget n - ceil(n/R), shrinking the final cluster
    if needed.  If one sweep over all points cannot meet the budget (cluster
    size below R), surviving representatives are re-clustered in further
    sweeps until it is.
    """
    n = cloud.size
    if n == 0:
        raise ValueError("cannot sub-sample an empty cloud")
    r = _as_ratio(ratio)
    if cluster_size is None:
        cluster_size = max(2, int(r + Fraction(1, 2)))
    if cluster_size < 2:
        raise ValueError("cluster_size must be >= 2")
    c = cluster_size
    keep_target = _ceil_div_frac(n, r)
    budget = n - keep_target

    layout = _cached_layout(cloud, 1, 1)
    order = layout.order
    if budget == 0:
        if stats_out is not None:
            stats_out.update(passes=0, clusters=0, points_processed=0)
        return cloud.take(order)

    cache = cloud._cache
    pos_v = cache.get("pos_visit")
    if pos_v is None:
        pos_v = np.ascontiguousarray(cloud.positions[order])
        cache["pos_visit"] = pos_v
    spatial_rank = cache.get("spatial_rank_visit")
    if spatial_rank is None:
        orig = order.astype(np.int64)
        # Single-integer encoding of the (z, y, x, original index) order.
        spatial_rank = np.empty(n, dtype=np.int64)
        spatial_rank[np.lexsort((orig, pos_v[:, 0], pos_v[:, 1],
                                 pos_v[:, 2]))] = np.arange(n)
        cache["spatial_rank_visit"] = spatial_rank

    has_cap_leaves = bool((layout.leaf_sizes > 1).any())
    if has_cap_leaves:
        leaf_start_per = np.repeat(layout.leaf_starts, layout.leaf_sizes)
        leaf_size_per = np.repeat(layout.leaf_sizes, layout.leaf_sizes)
    else:  # placeholders; the kernel never reads them
        leaf_start_per = leaf_size_per = np.zeros(0, dtype=np.int64)

    survivors = np.ones(n, dtype=np.uint8)
    scratch = np.empty(n, dtype=np.int64)
    budget_left = budget
    passes = 0
    clusters = 0
    processed_total = 0

    while budget_left > 0:
        passes += 1
        alive = survivors.copy()
        alive_idx = np.flatnonzero(alive).astype(np.int64)
        a_n = len(alive_idx)
        if a_n <= 1:
            break
        first_pass = a_n == n
        budget_at_pass_start = budget_left

        # Candidate rows come from a k-d tree over the pass-start live set.
        # When most points will be swept into clusters, one mass query is
        # cheapest; when clusters are few (large c), querying per processed
        # seed avoids computing rows that are never read.  k is quantized to
        # power-of-two tiers purely so first-pass query results can be shared
        # across calls with different ratios; k never affects the output.
        tree = None
        mass_cand = mass_dist = None
        k_query = 16
        while k_query < 2 * c + 9:
            k_query *= 2
        k_query = int(min(a_n, k_query))
        if a_n > _BRUTE_THRESHOLD:
            if first_pass:
                tree = cache.get("kdtree_visit")
                if tree is None:
                    tree = cKDTree(pos_v)
                    cache["kdtree_visit"] = tree
            else:
                tree = cKDTree(pos_v[alive_idx])
            expected_clusters = budget_left // (c - 1) + 1
            if 8 * expected_clusters >= a_n:
                key = ("nn_rows", k_query)
                hit = cache.get(key) if first_pass else None
                if hit is None:
                    mass_dist, nbrs = tree.query(pos_v[alive_idx], k=k_query,
                                                 workers=1)
                    mass_cand = alive_idx[nbrs].astype(np.int64)
                    if mass_cand.ndim == 1:  # k == 1 edge
                        mass_cand = mass_cand[:, None]
                        mass_dist = mass_dist[:, None]
                    if first_pass:
                        cache[key] = (mass_dist, mass_cand)
                else:
                    mass_dist, mass_cand = hit

        def resolve_python(seed: int, need: int) -> list:
            """Exact neighbor selection when candidate rows are inconclusive:
            rank every live point (vectorized, so cheaper than re-querying)."""
            live = np.flatnonzero(alive)
            pool = live[live != seed]
            return _rank_neighbors(pos_v, spatial_rank, seed, pool, need)

        def commit(members: list) -> None:
            nonlocal budget_left, clusters, processed_total
            clusters += 1
            processed_total += len(members)
            size = len(members)
            if size == 2:
                a, b = members
                middle = b if spatial_rank[a] < spatial_rank[b] else a
            elif size == 1:
                middle = members[0]
            else:
                middle = sorted(members, key=lambda q: spatial_rank[q])[size // 2]
            for q in members:
                alive[q] = 0
                if q != middle:
                    survivors[q] = 0
            budget_left -= size - 1

        if _HAVE_NUMBA and mass_cand is not None:
            (_, budget_left, cl_d, pr_d,
             _) = _sweep_kernel(alive_idx, 0, mass_cand, mass_dist,
                                spatial_rank, alive, survivors,
                                leaf_start_per, leaf_size_per,
                                has_cap_leaves, scratch, pos_v, budget_left,
                                c, a_n, _TIE_EPS)
            clusters += cl_d
            processed_total += pr_d
        else:
            for si in range(a_n):
                if budget_left == 0:
                    break
                seed = int(alive_idx[si])
                if not alive[seed]:
                    continue
                members = None
                if has_cap_leaves and leaf_size_per[seed] > 1:
                    # Depth-capped leaf: a ready-made cluster.
                    s0 = int(leaf_start_per[seed])
                    cohabitants = [q for q in
                                   range(s0, s0 + int(leaf_size_per[seed]))
                                   if alive[q]]
                    if len(cohabitants) > 1:
                        members = cohabitants[:budget_left + 1]
                if members is None:
                    need = min(c, budget_left + 1) - 1
                    neighbors = None
                    if tree is not None:
                        if mass_cand is not None:
                            neighbors = _walk_row(mass_cand[si], mass_dist[si],
                                                  k_query, seed, alive, a_n,
                                                  need)
                        else:
                            k_single = int(min(a_n, 2 * c + 9))
                            row_d, row_i = tree.query(pos_v[seed], k=k_single)
                            neighbors = _walk_row(alive_idx[row_i], row_d,
                                                  k_single, seed, alive, a_n,
                                                  need)
                    if neighbors is None:
                        neighbors = resolve_python(seed, need)
                    members = [seed] + neighbors
                commit(members)

        if budget_left == budget_at_pass_start:
            break  # nothing removable this pass

    if stats_out is not None:
        stats_out.update(passes=passes, clusters=clusters,
                         points_processed=processed_total)
    result = cloud.take(order[survivors.astype(bool)])
    assert result.size == keep_target
    return result


def _walk_row(row_v, row_d, k_row: int, seed: int, alive: np.ndarray,
              a_n: int, need: int) -> list | None:
    """First `need` live candidates of a distance-sorted row, or None when a
    tie or truncation makes the row inconclusive."""
    got: list[int] = []
    last_j = -1
    for j in range(k_row):
        q = int(row_v[j])
        if q != seed and alive[q]:
            got.append(q)
            last_j = j
            if len(got) == need:
                break
    covers_all = k_row == a_n
    if len(got) < need:
        return got if covers_all else None
    # Scan just past the last pick: a live entry inside the tie bound, or a
    # truncated row still inside it, is inconclusive.
    bound = row_d[last_j] * (1 + _TIE_EPS)
    j = last_j + 1
    while j < k_row and row_d[j] <= bound:
        q = int(row_v[j])
        if q != seed and alive[q]:
            return None
        j += 1
    if j == k_row and not covers_all:
        return None
    return got


@_njit(cache=True)
def _sweep_kernel(seeds, start_si, cand, dist, srank, alive, survivors,
                  leaf_start_per, leaf_size_per, has_caps, scratch, pos,
                  budget_left, c, a_n, tie_eps):  # pragma: no cover - C path
    """Compiled mass-mode sweep; mirrors the Python sweep exactly.

    Inconclusive candidate rows (ties, truncation, exhausted rows) are
    resolved in-kernel by an exact (squared distance, spatial rank)
    selection over every live point.  Returns (si, budget_left, clusters,
    processed, status); status is 0 when the budget is met, 2 when the pass
    ran out of seeds.
    """
    clusters = 0
    processed = 0
    k_row = cand.shape[1]
    n_total = alive.shape[0]
    covers_all = k_row == a_n
    best_d2 = np.empty(c, np.float64)
    best_sr = np.empty(c, np.int64)
    best_q = np.empty(c, np.int64)
    si = start_si
    while si < len(seeds):
        if budget_left == 0:
            return si, budget_left, clusters, processed, 0
        seed = seeds[si]
        if alive[seed] == 0:
            si += 1
            continue

        m_count = 0
        if has_caps and leaf_size_per[seed] > 1:
            limit = budget_left + 1
            s0 = leaf_start_per[seed]
            for q in range(s0, s0 + leaf_size_per[seed]):
                if alive[q] != 0:
                    scratch[m_count] = q
                    m_count += 1
                    if m_count == limit:
                        break
            if m_count <= 1:
                m_count = 0

        if m_count == 0:
            want = c if c < budget_left + 1 else budget_left + 1
            need = want - 1
            got = 0
            last_j = -1
            for j in range(k_row):
                q = cand[si, j]
                if q != seed and alive[q] != 0:
                    scratch[1 + got] = q
                    got += 1
                    last_j = j
                    if got == need:
                        break
            ok = False
            if got == need:
                bound = dist[si, last_j] * (1.0 + tie_eps)
                safe = True
                j = last_j + 1
                while j < k_row and dist[si, j] <= bound:
                    q = cand[si, j]
                    if q != seed and alive[q] != 0:
                        safe = False
                        break
                    j += 1
                if safe and j == k_row and not covers_all:
                    safe = False
                ok = safe
            elif covers_all:
                ok = True
            if not ok:
                # Exact selection over every live point, ordered by
                # (squared distance, spatial rank).
                sx = pos[seed, 0]
                sy = pos[seed, 1]
                sz = pos[seed, 2]
                cnt = 0
                for q in range(n_total):
                    if q == seed or alive[q] == 0:
                        continue
                    dx = pos[q, 0] - sx
                    dy = pos[q, 1] - sy
                    dz = pos[q, 2] - sz
                    d2 = dx * dx + dy * dy + dz * dz
                    sr = srank[q]
                    if cnt == need and (d2 > best_d2[cnt - 1]
                                        or (d2 == best_d2[cnt - 1]
                                            and sr > best_sr[cnt - 1])):
                        continue
                    if cnt < need:
                        cnt += 1
                    i = cnt - 1
                    while i > 0 and (best_d2[i - 1] > d2
                                     or (best_d2[i - 1] == d2
                                         and best_sr[i - 1] > sr)):
                        best_d2[i] = best_d2[i - 1]
                        best_sr[i] = best_sr[i - 1]
                        best_q[i] = best_q[i - 1]
                        i -= 1
                    best_d2[i] = d2
                    best_sr[i] = sr
                    best_q[i] = q
                for i in range(cnt):
                    scratch[1 + i] = best_q[i]
                got = cnt
            scratch[0] = seed
            m_count = 1 + got

        # Middle: the member of rank floor(m_count/2) in the spatial order.
        mid_rank = m_count // 2
        middle = scratch[0]
        for i in range(m_count):
            v = srank[scratch[i]]
            smaller = 0
            for j2 in range(m_count):
                if srank[scratch[j2]] < v:
                    smaller += 1
            if smaller == mid_rank:
                middle = scratch[i]
                break
        for i in range(m_count):
            q = scratch[i]
            alive[q] = 0
            if q != middle:
                survivors[q] = 0
        budget_left -= m_count - 1
        clusters += 1
        processed += m_count
        si += 1
    status = 0 if budget_left == 0 else 2
    return si, budget_left, clusters, processed, status


_DISPATCH = {
    METHOD_STRIDE: lambda cloud, spec: stride_subsample(cloud, spec.exact_ratio),
    METHOD_TREE: lambda cloud, spec: tree_subsample(
        cloud, spec.exact_ratio, spec.grid_resolution, spec.leaf_threshold),
    METHOD_CLUSTER: lambda cloud, spec: cluster_subsample(
        cloud, spec.exact_ratio, spec.effective_cluster_size),
}


def subsample(cloud: PointCloud, spec: SamplingSpec) -> PointCloud:
    """Apply the method selected by `spec`."""
    return _DISPATCH[spec.method](cloud, spec)
