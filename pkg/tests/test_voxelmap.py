"""Tests for the voxel map, plane fitting and correspondence search."""

import os
import tempfile

import numpy as np
import pandas as pd
import pytest

from easylio.config import Config
from easylio.voxelmap import (
    MAP_COLUMNS,
    VoxelMap,
    candidate_voxels,
    distance_to_voxel,
    fit_plane,
    plane_covariance,
    point_covariances,
)


def plane_patch(z=0.2, spacing=0.05, lo=0.025, hi=0.475):
    """Grid of points on the horizontal plane at height ``z``."""
    axis = np.arange(lo, hi + 1e-9, spacing)
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, z)])


def iso(n, sigma=0.01):
    """Isotropic covariances."""
    return np.broadcast_to(np.eye(3) * sigma**2, (n, 3, 3)).copy()


class TestGeometryHelpers:
    """Test cases for candidate selection and box distances."""

    def test_center_has_only_the_root(self):
        """Test that a point in the middle third selects only its own voxel."""
        assert candidate_voxels([0.25, 0.25, 0.25], 0.5) == [(0, 0, 0)]

    def test_edge_and_corner(self):
        """Test the neighbors added for low and high thirds."""
        assert candidate_voxels([0.05, 0.25, 0.45], 0.5) == [(0, 0, 0), (-1, 0, 0), (-1, 0, 1), (0, 0, 1)]
        corner = candidate_voxels([0.05, 0.05, 0.05], 0.5)
        assert len(corner) == 8
        assert corner[0] == (0, 0, 0)
        assert (-1, -1, -1) in corner

    def test_negative_coordinates(self):
        """Test floor semantics below zero."""
        assert candidate_voxels([-0.25, -0.25, -0.25], 0.5) == [(-1, -1, -1)]

    def test_candidate_count(self):
        """Test that there are always 1, 2, 4 or 8 candidates."""
        rng = np.random.default_rng(0)
        for p in rng.uniform(-5.0, 5.0, size=(200, 3)):
            assert len(candidate_voxels(p, 0.5)) in (1, 2, 4, 8)

    def test_distance_to_voxel(self):
        """Test the point-to-box distance."""
        assert distance_to_voxel([0.2, 0.3, 0.4], (0, 0, 0), 0.5) == 0.0
        assert distance_to_voxel([1.2, 0.25, 0.25], (0, 0, 0), 0.5) == pytest.approx(0.7)
        assert distance_to_voxel([-0.3, -0.4, 0.25], (0, 0, 0), 0.5) == pytest.approx(0.5)

    def test_point_covariance_shape(self):
        """Test range noise along the ray and angular noise across it."""
        cov = point_covariances([[10.0, 0.0, 0.0]], 0.02, 1e-3)[0]
        np.testing.assert_allclose(np.diag(cov), [4e-4, 1e-4, 1e-4])
        np.testing.assert_array_equal(point_covariances([[0.0, 0.0, 0.0]], 0.02, 1e-3)[0], np.zeros((3, 3)))


class TestPlaneFit:
    """Test cases for plane fitting and its uncertainty."""

    def test_flat_patch(self):
        """Test normal orientation and validity of an exact plane."""
        pts = plane_patch(z=2.0)
        plane = fit_plane(pts, iso(len(pts)))
        assert plane.valid
        np.testing.assert_allclose(plane.normal, [0.0, 0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(plane.centroid, pts.mean(axis=0))
        assert plane.eigenvalues[0] == pytest.approx(0.0, abs=1e-15)

    def test_thick_scatter_is_invalid(self):
        """Test that a volumetric cloud does not form a plane."""
        pts = np.random.default_rng(1).uniform(0.0, 0.5, size=(50, 3))
        assert not fit_plane(pts, iso(50), threshold=1e-3).valid

    def test_too_few_points(self):
        """Test that thin support is not a plane."""
        pts = plane_patch()[:4]
        assert not fit_plane(pts, iso(4)).valid

    def test_collinear_points_are_invalid(self):
        """Test that a degenerate eigenvalue gap is rejected."""
        pts = np.column_stack([np.linspace(0.0, 0.5, 10), np.zeros(10), np.zeros(10)])
        assert not fit_plane(pts, iso(10)).valid

    def test_covariance_matches_monte_carlo(self):
        """Test the first-order normal and centroid covariance against sampling."""
        rng = np.random.default_rng(2)
        sigma = 0.01
        base = np.column_stack([rng.uniform(0.0, 0.5, 30), rng.uniform(0.0, 0.5, 30), np.full(30, 2.0)])
        predicted = plane_covariance(base, iso(30, sigma))

        samples = []
        for _ in range(3000):
            noisy = base + rng.normal(scale=sigma, size=base.shape)
            plane = fit_plane(noisy, iso(30, sigma), threshold=1.0)
            samples.append(np.concatenate([plane.normal, plane.centroid]))
        empirical = np.cov(np.array(samples).T)

        # Normal x, y and the whole centroid are first-order quantities
        for k in (0, 1, 3, 4, 5):
            assert empirical[k, k] == pytest.approx(predicted[k, k], rel=0.15)
        np.testing.assert_allclose(predicted, predicted.T)


class TestVoxelMap:
    """Test cases for insertion, cropping and export."""

    def setup_method(self):
        """Set up a map holding one horizontal patch."""
        self.temp_dir = tempfile.mkdtemp()
        self.vmap = VoxelMap(0.5, max_points=200)
        pts = plane_patch()
        self.vmap.insert(pts, iso(len(pts)))

    def test_insert(self):
        """Test voxel creation and plane fitting on insert."""
        assert len(self.vmap) == 1
        assert (0, 0, 0) in self.vmap
        assert self.vmap.n_points == 100
        assert self.vmap.get((0, 0, 0)).plane_valid

    def test_eviction(self):
        """Test that only the newest points are kept."""
        vmap = VoxelMap(0.5, max_points=10)
        pts = plane_patch()
        vmap.insert(pts, iso(len(pts)))
        np.testing.assert_array_equal(vmap.get((0, 0, 0)).points, pts[-10:])

    def test_from_config(self):
        """Test construction from configuration."""
        vmap = VoxelMap.from_config(Config(d_root=1.0, max_points_per_voxel=7))
        assert (vmap.d_root, vmap.max_points) == (1.0, 7)

    def test_crop(self):
        """Test that far voxels are removed."""
        far = np.array([[10.25, 0.25, 0.25]])
        self.vmap.insert(far, iso(1))
        assert len(self.vmap) == 2
        assert self.vmap.crop([0.0, 0.0, 0.0], 5.0) == 1
        assert (20, 0, 0) not in self.vmap
        assert self.vmap.crop([0.0, 0.0, 0.0], 5.0) == 0

    def test_dump(self):
        """Test the CSV export."""
        path = os.path.join(self.temp_dir, "map.csv")
        self.vmap.dump(path)
        frame = pd.read_csv(path)
        assert tuple(frame.columns) == MAP_COLUMNS
        assert len(frame) == 1
        assert frame["valid"].iloc[0] == 1
        assert frame["count"].iloc[0] == 100
        assert frame["nz"].iloc[0] == pytest.approx(-1.0)


class TestCorrespondences:
    """Test cases for plane gating and nearest-neighbor fallback."""

    def setup_method(self):
        """Set up a map holding one horizontal patch."""
        self.vmap = VoxelMap(0.5, max_points=200)
        pts = plane_patch()
        self.vmap.insert(pts, iso(len(pts)))

    def test_plane_match(self):
        """Test that a point near the plane matches it."""
        corr = self.vmap.match_plane([0.25, 0.25, 0.21], np.eye(3) * 1e-4)
        assert corr is not None
        assert corr.kind == "plane"
        np.testing.assert_allclose(corr.normal, [0.0, 0.0, -1.0], atol=1e-12)

    def test_gate_rejects_far_points(self):
        """Test that a point far off the plane fails the gate."""
        assert self.vmap.match_plane([0.25, 0.25, 0.45], np.eye(3) * 1e-6) is None

    def test_hybrid_fallback(self):
        """Test plane matches first, then point matches for the rest."""
        queries = np.array([[0.25, 0.25, 0.21], [0.225, 0.225, 0.3], [0.25, 0.25, 0.49]])
        covs = np.stack([np.eye(3) * 1e-4, np.eye(3) * 1e-8, np.eye(3) * 1e-8])
        corr = self.vmap.find_correspondences(queries, covs)
        np.testing.assert_array_equal(corr.plane_index, [0])
        np.testing.assert_array_equal(corr.point_index, [1])
        np.testing.assert_allclose(corr.targets[0], [0.225, 0.225, 0.2], atol=1e-12)
        assert corr.n_eval[0] == 100

    def test_plane_only(self):
        """Test that disabling the hybrid metric drops point matches."""
        queries = np.array([[0.25, 0.25, 0.21], [0.25, 0.25, 0.3]])
        covs = np.stack([np.eye(3) * 1e-4, np.eye(3) * 1e-8])
        corr = self.vmap.find_correspondences(queries, covs, hybrid=False)
        assert (corr.n_plane, corr.n_point) == (1, 0)

    def test_unknown_searcher(self):
        """Test that unknown searchers are rejected."""
        with pytest.raises(ValueError, match="Unknown searcher"):
            self.vmap.find_correspondences([[0.25, 0.25, 0.3]], np.eye(3)[None] * 1e-8, searcher="kdtree")


class TestNearestNeighbor:
    """Test cases for the pruned and exhaustive searches."""

    def setup_method(self):
        """Set up a map of random points."""
        rng = np.random.default_rng(4)
        self.vmap = VoxelMap(0.5, max_points=50)
        pts = rng.uniform(0.0, 3.0, size=(3000, 3))
        self.vmap.insert(pts, iso(len(pts)))
        self.queries = rng.uniform(0.1, 2.9, size=(300, 3))

    def test_pruned_matches_exhaustive(self):
        """Test that the pruned search returns the exhaustive result."""
        for q in self.queries:
            pruned = self.vmap.nn_search_pruned(q)
            full = self.vmap.nn_search_exhaustive(q)
            assert (pruned is None) == (full is None)
            if pruned is not None:
                np.testing.assert_array_equal(pruned[0], full[0])
                assert pruned[1] == full[1]

    def test_pruned_does_less_work(self):
        """Test that pruning evaluates fewer points and at most 8 voxels."""
        pruned_eval = full_eval = 0
        for q in self.queries:
            pruned = self.vmap.nn_search_pruned(q, tau=10.0)
            full = self.vmap.nn_search_exhaustive(q, tau=10.0)
            assert pruned[2].n_accessed <= 8
            assert pruned[2].n_eval <= full[2].n_eval
            pruned_eval += pruned[2].n_eval
            full_eval += full[2].n_eval
        assert pruned_eval < full_eval

    def test_threshold_is_strict(self):
        """Test that only points strictly closer than tau are returned."""
        vmap = VoxelMap(0.5)
        vmap.insert([[0.25, 0.25, 0.25]], iso(1))
        assert vmap.nn_search_pruned([0.25, 0.25, 0.375], tau=0.125) is None
        found = vmap.nn_search_pruned([0.25, 0.25, 0.3125], tau=0.125)
        assert found is not None
        assert found[1] == 0.0625

    def test_face_neighbors(self):
        """Test the six-neighbor variant."""
        found = self.vmap.nn_search_exhaustive(self.queries[0], neighbors="face6")
        if found is not None:
            assert found[2].n_accessed <= 7


@pytest.mark.slow
class TestSearchCorpus:
    """Exactness and work reduction of the pruned search on larger random maps."""

    def _maps(self, n_queries=5000):
        rng = np.random.default_rng(11)
        uniform = rng.uniform(0.0, 5.0, size=(20000, 3))
        centers = rng.uniform(0.5, 4.5, size=(20, 3))
        clustered = centers[rng.integers(0, 20, 20000)] + rng.normal(scale=0.5, size=(20000, 3))
        for pts in (uniform, clustered):
            vmap = VoxelMap(0.5, max_points=50)
            vmap.insert(pts, iso(len(pts)))
            queries = pts[rng.integers(0, len(pts), n_queries)] + rng.normal(scale=0.1, size=(n_queries, 3))
            yield vmap, queries

    def _check(self, n_queries):
        for vmap, queries in self._maps(n_queries):
            pruned_eval = full_eval = 0
            for q in queries:
                pruned = vmap.nn_search_pruned(q)
                full = vmap.nn_search_exhaustive(q, tau=10.0)
                expected = full if full is not None and full[1] < vmap.d_root / 3.0 else None
                assert (pruned is None) == (expected is None)
                if pruned is not None:
                    np.testing.assert_array_equal(pruned[0], expected[0])
                    assert pruned[1] == expected[1]
                    assert pruned[2].n_accessed <= 8
                    pruned_eval += pruned[2].n_eval
                    full_eval += full[2].n_eval
            assert pruned_eval <= 0.5 * full_eval

    def test_exact_and_cheaper(self):
        """Test zero mismatches, at most 8 voxels and half the evaluated points."""
        self._check(5000)

    def test_exact_on_hundred_thousand_queries(self):
        """Test the same guarantees on 10^5 queries split over both maps."""
        self._check(50000)
