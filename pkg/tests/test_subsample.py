import math
from fractions import Fraction

import numpy as np
import pytest

from pcstream.core import PointCloud, save_ply, sort_spatial
from pcstream import subsample as ss
from pcstream.subsample import (SamplingSpec, build_density_tree,
                                cluster_subsample, stride_subsample,
                                subsample, target_keep_count, tree_subsample)

from conftest import make_cloud


# ---------------------------------------------------------------------------
# Independent oracle: pure-Python octree + O(n^2) neighbor scans.  Shares no
# code with the library implementation beyond the documented contract.

_DEPTH_CAP = 21


def _oracle_axis_ints(cloud):
    lo = cloud.positions.min(axis=0)
    hi = cloud.positions.max(axis=0)
    cells = 1 << _DEPTH_CAP
    out = []
    for i in range(cloud.size):
        w = []
        for a in range(3):
            ext = hi[a] - lo[a]
            if ext > 0:
                t = (float(cloud.positions[i, a]) - float(lo[a])) / float(ext)
                v = math.floor(t * cells)
                w.append(min(max(v, 0), cells - 1))
            else:
                w.append(0)
        out.append(w)
    return out


def _oracle_leaves(cloud):
    """Leaves of the complete octree in processing order, each a list of
    point indices in spatial order."""
    ints = _oracle_axis_ints(cloud)
    leaves = []  # (depth, dfs_counter, [indices])
    counter = [0]

    def recurse(indices, depth):
        if len(indices) <= 1 or depth == _DEPTH_CAP:
            leaves.append((depth, counter[0], indices))
            counter[0] += 1
            return
        buckets = {k: [] for k in range(8)}
        for i in indices:
            bit = _DEPTH_CAP - 1 - depth
            oct_id = (((ints[i][0] >> bit) & 1) << 2 |
                      ((ints[i][1] >> bit) & 1) << 1 |
                      ((ints[i][2] >> bit) & 1))
            buckets[oct_id].append(i)
        for k in range(8):
            if buckets[k]:
                recurse(buckets[k], depth + 1)

    recurse(list(range(cloud.size)), 0)
    pos = cloud.positions

    def spatial_key(i):
        return (pos[i, 2], pos[i, 1], pos[i, 0], i)

    ordered = sorted(leaves, key=lambda rec: (-rec[0], rec[1]))
    return [sorted(idx, key=spatial_key) for _, _, idx in ordered]


def _oracle_cluster_subsample(cloud, ratio, cluster_size):
    """Reference implementation scanning all pairwise distances."""
    n = cloud.size
    r = Fraction(ratio)
    keep_target = -((-n * r.denominator) // r.numerator)
    budget = n - keep_target
    leaves = _oracle_leaves(cloud)
    visit = [i for leaf in leaves for i in leaf]
    leaf_of = {}
    for li, leaf in enumerate(leaves):
        for i in leaf:
            leaf_of[i] = li
    pos = cloud.positions

    def spatial_key(i):
        return (pos[i, 2], pos[i, 1], pos[i, 0], i)

    survivors = set(range(n))
    while budget > 0 and len(survivors) > 1:
        alive = set(survivors)
        progressed = False
        for seed in visit:
            if budget == 0:
                break
            if seed not in alive:
                continue
            leaf = leaves[leaf_of[seed]]
            members = None
            if len(leaf) > 1:
                cohabitants = [q for q in leaf if q in alive]
                if len(cohabitants) > 1:
                    members = cohabitants[:budget + 1]
            if members is None:
                want = min(cluster_size, budget + 1)
                others = [q for q in alive if q != seed]
                others.sort(key=lambda q: (
                    (pos[q, 0] - pos[seed, 0]) ** 2
                    + (pos[q, 1] - pos[seed, 1]) ** 2
                    + (pos[q, 2] - pos[seed, 2]) ** 2,
                    pos[q, 2], pos[q, 1], pos[q, 0], q))
                members = [seed] + others[:want - 1]
            if len(members) > 1:
                progressed = True
            members_sorted = sorted(members, key=spatial_key)
            middle = members_sorted[len(members) // 2]
            for q in members:
                alive.discard(q)
                if q != middle:
                    survivors.discard(q)
            budget -= len(members) - 1
        if not progressed:
            break
    kept = [i for i in visit if i in survivors]
    return cloud.take(kept)


def assert_subset_of_input(out: PointCloud, src: PointCloud):
    def rows(c):
        return {tuple(c.positions[i]) + tuple(c.colors[i])
                for i in range(c.size)}
    assert rows(out) <= rows(src)


# ---------------------------------------------------------------------------


class TestTargetKeepCount:
    def test_published_sequence_ratios(self):
        # 1,060,464-point sequence thinned by 7 and 35 lands near 150K / 30K.
        assert target_keep_count(1_060_464, 7) == 151_495
        assert target_keep_count(1_060_464, 35) == 30_299

    def test_identity_ratio(self):
        assert target_keep_count(10, 1) == 10

    def test_exact_ceiling(self):
        assert target_keep_count(1001, 2) == 501
        assert target_keep_count(5, 10) == 1
        assert target_keep_count(0, 3) == 0

    def test_fractional_ratio_exact(self):
        # 100/30 percent keeps ceil(n * 30 / 100)
        r = Fraction(100, 30)
        assert target_keep_count(1000, r) == 300
        assert target_keep_count(10, Fraction(10, 3)) == 3

    def test_float_ratio_no_drift(self):
        for n in (1, 10, 999, 12345):
            for d in (1, 2, 3, 7, 100, n):
                r = n / d
                if r < 1:
                    continue
                got = target_keep_count(n, r)
                exact = -((-n * Fraction(r).denominator)
                          // Fraction(r).numerator)
                assert got == exact

    def test_rejects_bad_ratio(self):
        with pytest.raises(ValueError):
            target_keep_count(5, 0.5)


class TestSpreadBits:
    def test_matches_bitwise_reference(self, rng):
        vals = rng.integers(0, 1 << 21, size=200, dtype=np.uint64)
        got = ss._spread3(vals)
        for v, g in zip(vals.tolist(), got.tolist()):
            ref = 0
            for b in range(21):
                ref |= ((v >> b) & 1) << (3 * b)
            assert g == ref


class TestStrideSubsample:
    def test_ten_points_ratio_two(self, rng):
        cloud = make_cloud(rng, 10)
        out = stride_subsample(cloud, 2)
        canon = sort_spatial(cloud)
        expect = canon.take([0, 2, 4, 6, 8])
        assert out == expect

    def test_ratio_one_is_spatial_sort(self, rng):
        cloud = make_cloud(rng, 57)
        assert stride_subsample(cloud, 1) == sort_spatial(cloud)

    def test_matches_index_enumeration_oracle(self, rng):
        for ratio in (2, 3, 7, 2.5, Fraction(10, 3)):
            cloud = make_cloud(rng, 101)
            canon = sort_spatial(cloud)
            r = Fraction(ratio)
            keep = -((-101 * r.denominator) // r.numerator)
            picks = [math.floor(j * r) for j in range(keep)]
            assert stride_subsample(cloud, ratio) == canon.take(picks)

    def test_nesting_for_doubled_ratio(self, rng):
        cloud = make_cloud(rng, 200)
        coarse = stride_subsample(cloud, 10)
        fine = stride_subsample(cloud, 5)
        assert_subset_of_input(coarse, fine)

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            stride_subsample(PointCloud.from_points([]), 2)


class TestDensityTree:
    def test_eight_corner_singletons(self):
        corners = [(x, y, z, 0, 0, 0) for x in (0, 1) for y in (0, 1)
                   for z in (0, 1)]
        tree = build_density_tree(PointCloud.from_points(corners),
                                  grid_resolution=2, leaf_threshold=1)
        leaves = list(tree.leaves())
        assert len(leaves) == 8
        assert all(leaf.depth == 0 for leaf in leaves)
        assert all(len(leaf.indices) == 1 for leaf in leaves)

    def test_no_split_when_threshold_exceeds_count(self, rng):
        cloud = make_cloud(rng, 100)
        tree = build_density_tree(cloud, grid_resolution=4, leaf_threshold=100)
        assert all(leaf.depth == 0 for leaf in tree.leaves())

    def test_leaf_occupancy_and_partition(self, rng):
        cloud = make_cloud(rng, 1000)
        tree = build_density_tree(cloud, grid_resolution=4, leaf_threshold=16)
        seen = []
        for leaf in tree.leaves():
            assert len(leaf.indices) <= 16
            seen.extend(leaf.indices.tolist())
        assert sorted(seen) == list(range(1000))

    def test_child_bounds_partition_parent(self, rng):
        cloud = make_cloud(rng, 500)
        tree = build_density_tree(cloud, grid_resolution=1, leaf_threshold=8)

        def walk(node):
            if node.is_leaf:
                return
            mid = 0.5 * (node.lo + node.hi)
            for child in node.children:
                for a in range(3):
                    assert (child.lo[a] == node.lo[a]
                            or child.lo[a] == mid[a])
                    assert (child.hi[a] == node.hi[a]
                            or child.hi[a] == mid[a])
                walk(child)

        for cell in tree.cells:
            walk(cell)

    def test_duplicates_share_depth_capped_leaf(self):
        pts = [(1.0, 2.0, 3.0, 0, 0, 0)] * 5 + [(9.0, 9.0, 9.0, 0, 0, 0)]
        tree = build_density_tree(PointCloud.from_points(pts),
                                  grid_resolution=1, leaf_threshold=1)
        cap = [leaf for leaf in tree.leaves() if len(leaf.indices) > 1]
        assert len(cap) == 1
        assert cap[0].depth == ss.MAX_SPLIT_DEPTH
        assert sorted(cap[0].indices.tolist()) == [0, 1, 2, 3, 4]

    def test_visit_order_matches_internal_layout(self, rng):
        cloud = make_cloud(rng, 600, grid_snap=12)
        for grid, m in ((1, 1), (2, 4), (16, 64)):
            tree = build_density_tree(cloud, grid, m)
            layout = ss._leaf_layout(cloud.positions, cloud.bbox, grid, m)
            visit = tree.visit_leaves()
            assert [len(l.indices) for l in visit] == layout.leaf_sizes.tolist()
            assert [l.depth for l in visit] == layout.leaf_depths.tolist()
            for leaf, start, size in zip(visit, layout.leaf_starts,
                                         layout.leaf_sizes):
                got = layout.order[start:start + size]
                assert sorted(got.tolist()) == sorted(leaf.indices.tolist())


class TestTreeSubsample:
    def test_ratio_one_permutes_by_visit_order(self, rng):
        cloud = make_cloud(rng, 77)
        out = tree_subsample(cloud, 1)
        layout = ss._leaf_layout(cloud.positions, cloud.bbox, 16, 64)
        assert out == cloud.take(layout.order)

    def test_single_leaf_stride(self, rng):
        cloud = make_cloud(rng, 8)
        out = tree_subsample(cloud, 4, grid_resolution=1, leaf_threshold=8)
        canon = sort_spatial(cloud)
        assert out == canon.take([0, 4])

    def test_exact_count_for_any_grid(self, rng):
        cloud = make_cloud(rng, 1000)
        for grid, m in ((1, 1), (2, 2), (4, 16), (16, 64), (3, 5)):
            out = tree_subsample(cloud, 5, grid, m)
            assert out.size == 200
            assert_subset_of_input(out, cloud)

    def test_budget_met_with_many_tiny_leaves(self, rng):
        # More leaves than the keep target: the drain phase must finish it.
        cloud = make_cloud(rng, 500)
        out = tree_subsample(cloud, 100, grid_resolution=8, leaf_threshold=1)
        assert out.size == 5
        assert_subset_of_input(out, cloud)

    def test_fractional_ratio(self, rng):
        cloud = make_cloud(rng, 999)
        out = tree_subsample(cloud, Fraction(100, 30))
        assert out.size == target_keep_count(999, Fraction(100, 30))


class TestClusterSubsample:
    def test_three_collinear_keep_middle(self):
        pts = [(0, 0, 0, 1, 1, 1), (0, 0, 1, 2, 2, 2), (0, 0, 2, 3, 3, 3)]
        cloud = PointCloud.from_points(pts)
        out = cluster_subsample(cloud, 3, cluster_size=3)
        assert out.size == 1
        assert out.point(0)[:3] == (0, 0, 1)

    def test_ratio_one_no_removals(self, rng):
        cloud = make_cloud(rng, 41)
        out = cluster_subsample(cloud, 1)
        assert out.size == 41
        assert sorted(map(tuple, out.positions.tolist())) == \
            sorted(map(tuple, cloud.positions.tolist()))

    def test_exact_count_random(self, rng):
        cloud = make_cloud(rng, 100)
        out = cluster_subsample(cloud, 4, cluster_size=4)
        assert out.size == 25
        assert_subset_of_input(out, cloud)

    def test_processed_marks_cover_everything(self, rng):
        # c == R integral: the budget is met exactly when the sweep ends, so
        # every point must have been assigned to exactly one cluster.
        cloud = make_cloud(rng, 100)
        stats = {}
        cluster_subsample(cloud, 4, cluster_size=4, stats_out=stats)
        assert stats["points_processed"] == 100
        assert stats["passes"] == 1

    def test_multipass_when_cluster_below_ratio(self, rng):
        cloud = make_cloud(rng, 120)
        stats = {}
        out = cluster_subsample(cloud, 10, cluster_size=2, stats_out=stats)
        assert out.size == 12
        assert stats["passes"] > 1

    @pytest.mark.parametrize("n,ratio,c", [
        (1, 3, 2), (2, 2, 2), (3, 3, 3), (17, 5, 5), (60, 7, 7),
        (100, 4, 4), (100, 2, 2), (150, 35, 35), (200, 3, 2),
    ])
    def test_matches_brute_force_oracle(self, rng, n, ratio, c):
        cloud = make_cloud(rng, n)
        assert cluster_subsample(cloud, ratio, c) == \
            _oracle_cluster_subsample(cloud, ratio, c)

    def test_matches_oracle_with_ties_and_duplicates(self, rng):
        # Integer lattice coordinates force exact distance ties; snapping
        # also creates duplicate coordinates (depth-capped leaves).
        for seed in range(6):
            local = np.random.default_rng(seed)
            cloud = make_cloud(local, 90, grid_snap=3)
            got = cluster_subsample(cloud, 3, 3)
            want = _oracle_cluster_subsample(cloud, 3, 3)
            assert got == want

    def test_matches_oracle_fractional_ratio(self, rng):
        cloud = make_cloud(rng, 80)
        r = Fraction(5, 2)
        assert cluster_subsample(cloud, r, 2) == \
            _oracle_cluster_subsample(cloud, r, 2)

    def test_cluster_size_validation(self, rng):
        cloud = make_cloud(rng, 10)
        with pytest.raises(ValueError, match="cluster_size"):
            cluster_subsample(cloud, 2, cluster_size=1)

    @pytest.mark.skipif(not ss._HAVE_NUMBA, reason="no compiled kernel")
    def test_compiled_sweep_equals_python_sweep(self, rng, monkeypatch):
        for seed in range(4):
            local = np.random.default_rng(seed)
            cloud = make_cloud(local, 400, grid_snap=40 if seed % 2 else None)
            fast = [cluster_subsample(cloud, r) for r in (2, 3, 7, 35)]
            monkeypatch.setattr(ss, "_HAVE_NUMBA", False)
            slow = [cluster_subsample(cloud, r) for r in (2, 3, 7, 35)]
            monkeypatch.undo()
            assert fast == slow


class TestSamplingSpec:
    def test_exactly_one_of_ratio_percentage(self):
        with pytest.raises(ValueError):
            SamplingSpec(ratio=2, percentage=50)
        with pytest.raises(ValueError):
            SamplingSpec()

    def test_percentage_maps_to_exact_ratio(self):
        spec = SamplingSpec(percentage=30)
        assert spec.exact_ratio == Fraction(100, 30)

    def test_default_cluster_size_rounds_half_up(self):
        assert SamplingSpec(ratio=1).effective_cluster_size == 2
        assert SamplingSpec(ratio=7).effective_cluster_size == 7
        assert SamplingSpec(ratio=2.5).effective_cluster_size == 3

    def test_dispatch(self, rng):
        cloud = make_cloud(rng, 60)
        for method in ss.METHODS:
            out = subsample(cloud, SamplingSpec(method=method, ratio=3))
            assert out.size == 20


class TestCrossMethodProperties:
    RATIOS = (1, 2, 3, 5, 7, 35)

    def test_count_exactness_small_battery(self, rng):
        for _ in range(12):
            n = int(rng.integers(1, 400))
            cloud = make_cloud(rng, n)
            for ratio in self.RATIOS:
                expect = target_keep_count(n, ratio)
                for method in ss.METHODS:
                    out = subsample(cloud,
                                    SamplingSpec(method=method, ratio=ratio))
                    assert out.size == expect, (n, ratio, method)
                    assert_subset_of_input(out, cloud)

    def test_determinism_byte_identical(self, rng):
        cloud = make_cloud(rng, 333)
        for method in ss.METHODS:
            spec = SamplingSpec(method=method, ratio=3)
            a = save_ply(subsample(cloud, spec))
            b = save_ply(subsample(cloud, spec))
            assert a == b

    def test_duplicate_heavy_cloud(self, rng):
        base = make_cloud(rng, 20)
        pos = np.repeat(base.positions, 5, axis=0)
        col = np.repeat(base.colors, 5, axis=0)
        cloud = PointCloud(pos, col)
        for method in ss.METHODS:
            out = subsample(cloud, SamplingSpec(method=method, ratio=7))
            assert out.size == target_keep_count(100, 7)

    def test_degenerate_axes(self):
        pts = [(0, 0, float(i), i % 256, 0, 0) for i in range(50)]
        cloud = PointCloud.from_points(pts)
        for method in ss.METHODS:
            out = subsample(cloud, SamplingSpec(method=method, ratio=5))
            assert out.size == 10

    def test_single_point(self):
        cloud = PointCloud.from_points([(1, 2, 3, 4, 5, 6)])
        for method in ss.METHODS:
            out = subsample(cloud, SamplingSpec(method=method, ratio=35))
            assert out.size == 1
            assert out.point(0) == cloud.point(0)
