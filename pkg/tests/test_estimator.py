"""Tests for the hybrid measurement model and the iterated update."""

import numpy as np
import pytest

from easylio.config import Config
from easylio.estimator import (
    ESTIMATOR_COLUMNS,
    compute_J,
    condition_number,
    discretization_variance,
    integrate_scan,
    iterated_update,
    plane_term,
    point_term,
)
from easylio.geometry import STATE_DIM, NavState, RigidTransform, boxminus, boxplus, so3_exp, so3_log
from easylio.voxelmap import Correspondence, SearchStats, VoxelMap


def random_state(rng):
    """Draw a state with moderate values."""
    return NavState(
        position=rng.normal(size=3),
        rotation=so3_exp(rng.normal(size=3)),
        velocity=rng.normal(size=3),
    )


def box_points(half=2.05, step=0.1, extent=2.0):
    """Points on the six faces of an axis-aligned box around the origin."""
    axis = np.linspace(-extent, extent, int(round(2 * extent / step)) + 1)
    a, b = (g.ravel() for g in np.meshgrid(axis, axis, indexing="ij"))
    faces = []
    for sign in (-1.0, 1.0):
        c = np.full(a.size, sign * half)
        faces += [np.column_stack([c, a, b]), np.column_stack([a, c, b]), np.column_stack([a, b, c])]
    return np.concatenate(faces)


def numeric_row(term_z, x, eps=1e-7):
    """Central-difference derivative of a scalar residual over the tangent space."""
    row = np.zeros(STATE_DIM)
    for k in range(STATE_DIM):
        d = np.zeros(STATE_DIM)
        d[k] = eps
        row[k] = (term_z(boxplus(x, d)) - term_z(boxplus(x, -d))) / (2 * eps)
    return row


class TestMeasurementModel:
    """Test cases for plane and point terms."""

    def setup_method(self):
        """Set up a seeded generator and a non-trivial extrinsic."""
        self.rng = np.random.default_rng(9)
        self.extrinsic = RigidTransform.from_rotvec([0.1, -0.05, 0.2], [0.3, -0.1, 0.05])

    def test_plane_jacobian(self):
        """Test the plane row against finite differences."""
        for _ in range(100):
            x = random_state(self.rng)
            normal = self.rng.normal(size=3)
            normal /= np.linalg.norm(normal)
            corr = Correspondence(
                "plane",
                self.rng.normal(size=3) * 5.0,
                np.eye(3) * 1e-4,
                normal=normal,
                centroid=self.rng.normal(size=3),
                plane_cov=np.eye(6) * 1e-6,
            )
            term = plane_term(corr, x, self.extrinsic)
            numeric = numeric_row(lambda s: plane_term(corr, s, self.extrinsic).z, x)
            np.testing.assert_allclose(term.h, numeric, atol=1e-6)
            assert np.all(term.h[6:] == 0.0)
            assert term.r > 0.0

    def test_point_jacobian(self):
        """Test the point row on the residual norm against finite differences."""
        cfg = Config()
        for _ in range(100):
            x = random_state(self.rng)
            corr = Correspondence(
                "point",
                self.rng.normal(size=3) * 5.0,
                np.eye(3) * 1e-4,
                target=self.rng.normal(size=3) * 5.0,
                target_cov=np.eye(3) * 1e-4,
                stats=SearchStats(2, 40),
            )
            term = point_term(corr, x, self.extrinsic, cfg)
            numeric = numeric_row(lambda s: point_term(corr, s, self.extrinsic, cfg).z, x)
            np.testing.assert_allclose(term.h, numeric, atol=1e-6)
            assert term.r_disc == pytest.approx(2 * 0.25 / 40)
            assert term.r == pytest.approx(cfg.lambda_po * (2e-4 + term.r_disc))

    def test_plane_residual_value(self):
        """Test the signed distance and variance of a simple case."""
        corr = Correspondence(
            "plane",
            np.array([1.0, 2.0, 0.3]),
            np.zeros((3, 3)),
            normal=np.array([0.0, 0.0, 1.0]),
            centroid=np.zeros(3),
            plane_cov=np.diag([0.0, 0.0, 0.0, 0.0, 0.0, 1e-4]),
        )
        term = plane_term(corr, NavState())
        assert term.z == pytest.approx(0.3)
        assert term.r == pytest.approx(1e-4)

    def test_point_residual_too_short(self):
        """Test that a coincident match yields no term."""
        corr = Correspondence("point", np.ones(3), np.eye(3), target=np.ones(3), target_cov=np.eye(3))
        assert point_term(corr, NavState()) is None

    def test_wrong_kind(self):
        """Test that the term builders check the correspondence kind."""
        corr = Correspondence("point", np.ones(3), np.eye(3), target=np.zeros(3), target_cov=np.eye(3))
        with pytest.raises(ValueError, match="Expected a plane"):
            plane_term(corr, NavState())

    def test_discretization_variance(self):
        """Test the sparsity variance and its monotonicity."""
        assert discretization_variance(1, 10, 0.5) == pytest.approx(0.025)
        assert discretization_variance(1, 20, 0.5) < discretization_variance(1, 10, 0.5)
        assert discretization_variance(2, 10, 0.5) > discretization_variance(1, 10, 0.5)
        assert discretization_variance(1, 10, 1.0) > discretization_variance(1, 10, 0.5)

    def test_compute_j(self):
        """Test J against finite differences of boxminus(boxplus(x_iter, d), x_prior)."""
        eps = 1e-7
        for _ in range(100):
            x_prior = random_state(self.rng)
            x_iter = boxplus(x_prior, self.rng.normal(scale=0.3, size=STATE_DIM))
            numeric = np.zeros((STATE_DIM, STATE_DIM))
            for k in range(STATE_DIM):
                d = np.zeros(STATE_DIM)
                d[k] = eps
                plus = boxminus(boxplus(x_iter, d), x_prior)
                minus = boxminus(boxplus(x_iter, -d), x_prior)
                numeric[:, k] = (plus - minus) / (2 * eps)
            np.testing.assert_allclose(compute_J(x_iter, x_prior), numeric, atol=1e-6)
            np.testing.assert_allclose(compute_J(x_prior, x_prior), np.eye(STATE_DIM), atol=1e-12)


class TestConditionNumber:
    """Test cases for the pose-information condition number."""

    def _plane(self, query, normal):
        corr = Correspondence(
            "plane",
            np.asarray(query, dtype=float),
            np.eye(3) * 1e-4,
            normal=np.asarray(normal, dtype=float),
            centroid=np.zeros(3),
            plane_cov=np.zeros((6, 6)),
        )
        return plane_term(corr, NavState())

    def test_rank_deficient(self):
        """Test that parallel planes leave the pose unobservable."""
        terms = [self._plane([x, y, 0.0], [0.0, 0.0, 1.0]) for x in (-1.0, 1.0) for y in (-1.0, 1.0)]
        assert condition_number(terms) == float("inf")
        assert condition_number([]) == float("inf")

    def test_box_is_well_conditioned(self):
        """Test that three orthogonal walls constrain every pose direction."""
        terms = []
        for axis in range(3):
            normal = np.eye(3)[axis]
            others = [k for k in range(3) if k != axis]
            for a in (-1.0, 1.0):
                for b in (-1.0, 1.0):
                    for sign in (-1.0, 1.0):
                        q = np.zeros(3)
                        q[axis] = 2.0 * sign
                        q[others[0]], q[others[1]] = a, b
                        terms.append(self._plane(q, normal))
        cond = condition_number(terms)
        assert np.isfinite(cond)
        assert cond >= 1.0


class TestIteratedUpdate:
    """Test cases for the iterated Kalman update."""

    def setup_method(self):
        """Set up a map of a closed box seen from its center."""
        self.cfg = Config()
        self.points = box_points()
        self.vmap = VoxelMap.from_config(self.cfg)
        integrate_scan(self.points, NavState(), self.vmap, self.cfg)
        self.scan = self.points[::7]

    def test_integrate_scan(self):
        """Test that the map receives every point."""
        assert self.vmap.n_points == len(self.points)
        assert any(v.plane_valid for v in self.vmap)

    def test_recovers_offset_pose(self):
        """Test that a perturbed prior with a loose covariance converges back to the true pose."""
        prior = NavState(position=[0.02, -0.015, 0.01], rotation=so3_exp([0.0, 0.0, 0.005]))
        result = iterated_update(prior, np.eye(STATE_DIM) * 1e-2, self.scan, self.vmap, self.cfg)
        assert not result.rejected
        assert 1 <= result.iterations <= self.cfg.max_iterations
        assert len(result.n_plane) == result.iterations
        assert result.n_plane[-1] > 0
        assert not result.no_correspondences
        np.testing.assert_allclose(result.state.position, np.zeros(3), atol=1e-4)
        assert np.linalg.norm(so3_log(result.state.rotation)) < 1e-4
        assert np.isfinite(result.condition)
        np.testing.assert_allclose(result.covariance, result.covariance.T)
        assert np.all(np.diag(result.covariance)[:6] < 1e-4)

    def test_plane_only(self):
        """Test that disabling the hybrid metric uses plane rows only."""
        cfg = self.cfg.replace(hybrid_metric=False)
        result = iterated_update(NavState(), np.eye(STATE_DIM) * 1e-4, self.scan, self.vmap, cfg)
        assert all(n == 0 for n in result.n_point)
        assert np.isnan(result.n_eval_mean)

    def test_empty_map(self):
        """Test that nothing to match returns the prior unchanged."""
        prior = NavState(position=[1.0, 0.0, 0.0])
        result = iterated_update(prior, np.eye(STATE_DIM), self.scan, VoxelMap(), self.cfg)
        assert result.state is prior
        assert result.iterations == 0
        assert not result.rejected
        assert result.no_correspondences
        assert np.isnan(result.condition)

    def test_empty_scan(self):
        """Test that an empty scan returns the prior."""
        result = iterated_update(NavState(), np.eye(STATE_DIM), np.zeros((0, 3)), self.vmap, self.cfg)
        assert result.iterations == 0
        assert result.no_correspondences

    def test_singular_prior_is_rejected(self):
        """Test that a failed solve rejects the scan and returns the prior."""
        prior = NavState()
        result = iterated_update(prior, np.zeros((STATE_DIM, STATE_DIM)), self.scan, self.vmap, self.cfg)
        assert result.rejected
        assert result.state is prior

    def test_columns(self):
        """Test the per-frame diagnostics layout."""
        assert ESTIMATOR_COLUMNS[0] == "t"
        assert "cond_plane" in ESTIMATOR_COLUMNS
        assert ESTIMATOR_COLUMNS[-1] == "no_corr"
