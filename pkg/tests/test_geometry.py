"""Tests for the rotation algebra and the navigation-state manifold."""

import numpy as np
import pytest

from easylio.geometry import (
    STATE_DIM,
    NavState,
    RigidTransform,
    boxminus,
    boxplus,
    quaternion_to_rotation,
    right_jacobian,
    right_jacobian_inv,
    rotation_to_quaternion,
    skew,
    so3_exp,
    so3_log,
    vee,
)


def random_state(rng):
    """Draw a state with moderate values."""
    return NavState(
        position=rng.normal(size=3),
        rotation=so3_exp(rng.normal(size=3)),
        velocity=rng.normal(size=3),
        bias_gyro=rng.normal(scale=0.01, size=3),
        bias_accel=rng.normal(scale=0.1, size=3),
        gravity=np.array([0.0, 0.0, -9.81]) + rng.normal(scale=0.1, size=3),
    )


class TestSO3:
    """Test cases for the SO(3) maps."""

    def setup_method(self):
        """Set up a seeded generator."""
        self.rng = np.random.default_rng(7)

    def test_skew_matches_cross(self):
        """Test that skew(v) @ u equals the cross product."""
        v, u = self.rng.normal(size=3), self.rng.normal(size=3)
        np.testing.assert_allclose(skew(v) @ u, np.cross(v, u))
        np.testing.assert_allclose(vee(skew(v)), v)

    def test_exp_of_zero_is_identity(self):
        """Test the identity at the origin."""
        np.testing.assert_array_equal(so3_exp(np.zeros(3)), np.eye(3))
        np.testing.assert_array_equal(so3_log(np.eye(3)), np.zeros(3))

    def test_quarter_turn(self):
        """Test a 90 degree rotation about z."""
        r = so3_exp([0.0, 0.0, np.pi / 2])
        np.testing.assert_allclose(r @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)

    def test_log_inverts_exp(self):
        """Test Log(Exp(w)) == w for angles below pi."""
        for _ in range(100):
            w = self.rng.normal(size=3)
            w *= self.rng.uniform(0.0, 3.0) / np.linalg.norm(w)
            np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-10)

    def test_small_angle_branch(self):
        """Test the Taylor branch below 1e-8 rad."""
        w = np.array([1e-9, -2e-9, 5e-10])
        np.testing.assert_allclose(so3_log(so3_exp(w)), w, atol=1e-20)

    def test_log_near_pi(self):
        """Test that rotations by nearly pi keep their axis."""
        axis = np.array([1.0, 2.0, -2.0]) / 3.0
        for angle in (np.pi, np.pi - 1e-7):
            w = so3_log(so3_exp(angle * axis))
            assert np.linalg.norm(w) == pytest.approx(angle, abs=1e-9)
            np.testing.assert_allclose(so3_exp(w), so3_exp(angle * axis), atol=1e-9)

    def test_exp_is_orthonormal(self):
        """Test that Exp returns a proper rotation."""
        r = so3_exp(self.rng.normal(size=3) * 2.0)
        np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)

    def test_right_jacobian_first_order(self):
        """Test Exp(w + d) ~= Exp(w) Exp(Jr(w) d)."""
        w = self.rng.normal(size=3)
        d = 1e-6 * self.rng.normal(size=3)
        lhs = so3_exp(w + d)
        rhs = so3_exp(w) @ so3_exp(right_jacobian(w) @ d)
        np.testing.assert_allclose(lhs, rhs, atol=1e-11)

    def test_right_jacobian_inverse(self):
        """Test that the inverse Jacobian inverts the Jacobian."""
        for scale in (1e-7, 0.5, 2.5):
            w = scale * self.rng.normal(size=3)
            np.testing.assert_allclose(right_jacobian_inv(w) @ right_jacobian(w), np.eye(3), atol=1e-9)

    def test_quaternion_convention(self):
        """Test (x, y, z, w) ordering with a non-negative scalar part."""
        q = rotation_to_quaternion(so3_exp([0.0, 0.0, np.pi / 2]))
        np.testing.assert_allclose(q, [0.0, 0.0, np.sqrt(0.5), np.sqrt(0.5)], atol=1e-15)
        r = so3_exp([0.3, -2.9, 0.2])
        q = rotation_to_quaternion(r)
        assert q[3] >= 0.0
        np.testing.assert_allclose(quaternion_to_rotation(q), r, atol=1e-12)


class TestRigidTransform:
    """Test cases for RigidTransform."""

    def test_compose_and_inverse(self):
        """Test that T @ T^-1 is the identity."""
        t = RigidTransform.from_rotvec([0.1, -0.2, 0.3], [1.0, 2.0, 3.0])
        ident = t @ t.inverse()
        np.testing.assert_allclose(ident.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_allclose(ident.translation, np.zeros(3), atol=1e-15)

    def test_apply(self):
        """Test point transformation and composition order."""
        a = RigidTransform.from_rotvec([0.0, 0.0, np.pi / 2], [1.0, 0.0, 0.0])
        b = RigidTransform.from_rotvec([0.0, 0.0, 0.0], [0.0, 1.0, 0.0])
        p = np.array([[1.0, 0.0, 0.0]])
        np.testing.assert_allclose((a @ b).apply(p), a.apply(b.apply(p)), atol=1e-15)
        np.testing.assert_allclose(a.apply([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0], atol=1e-15)

    def test_arrays_are_read_only(self):
        """Test that transforms are immutable."""
        t = RigidTransform.identity()
        with pytest.raises(ValueError):
            t.translation[0] = 1.0

    def test_as_matrix(self):
        """Test the homogeneous matrix layout."""
        t = RigidTransform.from_rotvec([0.0, 0.0, 0.0], [1.0, 2.0, 3.0])
        m = t.as_matrix()
        np.testing.assert_array_equal(m[:3, 3], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(m[3], [0.0, 0.0, 0.0, 1.0])


class TestManifold:
    """Test cases for boxplus and boxminus."""

    def setup_method(self):
        """Set up a seeded generator."""
        self.rng = np.random.default_rng(11)

    def test_default_state(self):
        """Test the default state values."""
        x = NavState()
        np.testing.assert_array_equal(x.gravity, [0.0, 0.0, -9.81])
        np.testing.assert_array_equal(x.rotation, np.eye(3))
        assert x.is_finite()

    def test_boxminus_inverts_boxplus(self):
        """Test (x ⊞ d) ⊟ x == d."""
        for _ in range(50):
            x = random_state(self.rng)
            d = self.rng.normal(scale=0.5, size=STATE_DIM)
            np.testing.assert_allclose(boxminus(boxplus(x, d), x), d, atol=1e-9)

    def test_boxplus_of_zero(self):
        """Test x ⊞ 0 == x."""
        x = random_state(self.rng)
        y = boxplus(x, np.zeros(STATE_DIM))
        np.testing.assert_allclose(boxminus(y, x), np.zeros(STATE_DIM), atol=1e-15)

    def test_rotation_perturbation_is_right(self):
        """Test that the rotation block perturbs on the right."""
        x = NavState(rotation=so3_exp([0.0, 0.0, 0.5]))
        d = np.zeros(STATE_DIM)
        d[3:6] = [0.1, 0.0, 0.0]
        np.testing.assert_allclose(boxplus(x, d).rotation, x.rotation @ so3_exp([0.1, 0.0, 0.0]))

    def test_replace(self):
        """Test replacing one block."""
        x = NavState().replace(velocity=[1.0, 2.0, 3.0])
        np.testing.assert_array_equal(x.velocity, [1.0, 2.0, 3.0])
        assert not NavState(position=[np.nan, 0.0, 0.0]).is_finite()
