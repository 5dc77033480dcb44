"""Tests for initialization, IMU propagation and deskewing."""

import numpy as np
import pytest

from easylio.config import Config
from easylio.geometry import STATE_DIM, NavState, boxminus, boxplus, so3_exp, so3_log
from easylio.io import ImuSample, LidarScan
from easylio.preprocess import (
    DeskewError,
    InitializationError,
    PoseBuffer,
    crop_blind,
    deskew,
    forward_propagate,
    initial_covariance,
    initialize,
    process_noise,
    propagate_state,
    transition_jacobians,
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


def static_samples(n=100, rate=100.0, accel=(0.0, 0.0, 9.81), gyro=(0.0, 0.0, 0.0)):
    """Build samples of a platform at rest."""
    return [ImuSample(i / rate, np.array(gyro, dtype=float), np.array(accel, dtype=float)) for i in range(n)]


class TestInitialize:
    """Test cases for static initialization."""

    def test_gravity_and_gyro_bias(self):
        """Test that gravity and gyro bias come from the static means."""
        x, P = initialize(static_samples(accel=(0.0, 0.0, 9.7), gyro=(0.01, -0.02, 0.03)))
        np.testing.assert_allclose(x.gravity, [0.0, 0.0, -9.81])
        np.testing.assert_allclose(x.bias_gyro, [0.01, -0.02, 0.03])
        np.testing.assert_array_equal(x.rotation, np.eye(3))
        np.testing.assert_array_equal(x.position, np.zeros(3))
        assert P.shape == (STATE_DIM, STATE_DIM)
        np.testing.assert_allclose(P, initial_covariance(Config()))

    def test_tilted_platform(self):
        """Test that a tilted rest pose yields a tilted gravity vector."""
        accel = np.array([0.0, 9.81 * np.sin(0.1), 9.81 * np.cos(0.1)])
        x, _ = initialize(static_samples(accel=accel))
        np.testing.assert_allclose(x.gravity, -accel, atol=1e-12)

    def test_too_few_samples(self):
        """Test that fewer than min_static_samples is rejected."""
        with pytest.raises(InitializationError, match="at least 20"):
            initialize(static_samples(n=10))

    def test_implausible_gravity(self):
        """Test that a mean specific force far from g is rejected."""
        with pytest.raises(InitializationError, match="outside"):
            initialize(static_samples(accel=(0.0, 0.0, 1.0)))


class TestPropagation:
    """Test cases for the IMU transition model."""

    def setup_method(self):
        """Set up a seeded generator."""
        self.rng = np.random.default_rng(5)

    def test_static_state_unchanged(self):
        """Test that a resting platform stays put."""
        x = NavState()
        y = propagate_state(x, np.zeros(3), np.array([0.0, 0.0, 9.81]), 0.01)
        np.testing.assert_allclose(boxminus(y, x), np.zeros(STATE_DIM), atol=1e-15)

    def test_constant_acceleration_is_exact(self):
        """Test p = a t^2 / 2 under constant specific force."""
        imu = static_samples(n=101, accel=(1.0, 0.0, 9.81))
        x, _, _ = forward_propagate(NavState(), np.eye(STATE_DIM) * 1e-6, imu)
        np.testing.assert_allclose(x.position, [0.5, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(x.velocity, [1.0, 0.0, 0.0], atol=1e-12)

    def test_constant_rotation(self):
        """Test integration of a constant yaw rate."""
        imu = static_samples(n=101, gyro=(0.0, 0.0, 0.5))
        x, _, _ = forward_propagate(NavState(), np.eye(STATE_DIM) * 1e-6, imu)
        np.testing.assert_allclose(so3_log(x.rotation), [0.0, 0.0, 0.5], atol=1e-12)

    @pytest.mark.parametrize("seed", range(100))
    def test_transition_jacobian_matches_finite_differences(self, seed):
        """Test F against central differences of the state transition."""
        rng = np.random.default_rng(seed)
        x = random_state(rng)
        gyro, accel, dt = rng.normal(size=3), rng.normal(size=3) + [0.0, 0.0, 9.81], 0.01
        f, _ = transition_jacobians(x, gyro, accel, dt)
        base = propagate_state(x, gyro, accel, dt)
        eps = 1e-6
        numeric = np.zeros((STATE_DIM, STATE_DIM))
        for k in range(STATE_DIM):
            d = np.zeros(STATE_DIM)
            d[k] = eps
            plus = boxminus(propagate_state(boxplus(x, d), gyro, accel, dt), base)
            minus = boxminus(propagate_state(boxplus(x, -d), gyro, accel, dt), base)
            numeric[:, k] = (plus - minus) / (2 * eps)
        np.testing.assert_allclose(numeric, f, atol=1e-7)

    def test_noise_jacobian_matches_finite_differences(self):
        """Test that G maps reading perturbations to state perturbations."""
        for _ in range(20):
            x = random_state(self.rng)
            gyro, accel, dt = self.rng.normal(size=3), self.rng.normal(size=3) + [0.0, 0.0, 9.81], 0.01
            _, g = transition_jacobians(x, gyro, accel, dt)
            base = propagate_state(x, gyro, accel, dt)
            eps = 1e-6
            numeric = np.zeros((STATE_DIM, 6))
            for k in range(6):
                e = np.zeros(6)
                e[k] = eps
                plus = boxminus(propagate_state(x, gyro + e[:3], accel + e[3:], dt), base)
                minus = boxminus(propagate_state(x, gyro - e[:3], accel - e[3:], dt), base)
                numeric[:, k] = (plus - minus) / (2 * eps)
            # Readings enter with the opposite sign of the noise, scaled by dt
            np.testing.assert_allclose(numeric, -g[:, :6] * dt, atol=1e-9)

    def test_covariance_stays_symmetric_psd(self):
        """Test that propagated covariance is symmetric and positive semidefinite."""
        imu = [ImuSample(i * 0.005, self.rng.normal(size=3), self.rng.normal(size=3) + 9.81) for i in range(200)]
        _, P, _ = forward_propagate(NavState(), initial_covariance(Config()), imu)
        np.testing.assert_array_equal(P, P.T)
        assert np.linalg.eigvalsh(P).min() > -1e-15

    def test_process_noise(self):
        """Test the continuous noise covariance layout."""
        cfg = Config(gyro_noise=1.0, accel_noise=2.0, gyro_bias_walk=3.0, accel_bias_walk=4.0)
        np.testing.assert_array_equal(np.diag(process_noise(cfg)), np.repeat([1.0, 4.0, 9.0, 16.0], 3))

    def test_buffer_breakpoints(self):
        """Test that the pose buffer holds t_start, inner samples and t_end."""
        imu = static_samples(n=11)
        _, _, buffer = forward_propagate(NavState(), np.eye(STATE_DIM), imu, t_start=0.015, t_end=0.055)
        np.testing.assert_allclose(buffer.times, [0.015, 0.02, 0.03, 0.04, 0.05, 0.055])
        assert len(buffer) == 6

    def test_empty_imu(self):
        """Test that no samples leaves the state and a one-pose buffer."""
        x = NavState(position=[1.0, 2.0, 3.0])
        y, P, buffer = forward_propagate(x, np.eye(STATE_DIM), [], t_start=1.0)
        assert y is x
        assert len(buffer) == 1
        np.testing.assert_array_equal(buffer.pose(0).translation, [1.0, 2.0, 3.0])


class TestDeskew:
    """Test cases for motion compensation."""

    def setup_method(self):
        """Set up a buffer moving at 1 m/s along x."""
        self.buffer = PoseBuffer(
            np.array([0.9, 1.0]),
            np.stack([np.eye(3), np.eye(3)]),
            np.array([[0.9, 0.0, 0.0], [1.0, 0.0, 0.0]]),
        )

    def test_translation_is_compensated(self):
        """Test that a static world point deskews to its end-of-scan coordinates."""
        world = np.array([5.0, 1.0, 0.5])
        offsets = np.array([-0.1, -0.05, 0.0])
        points = np.array([world - [1.0 + o, 0.0, 0.0] for o in offsets])
        out = deskew(LidarScan(1.0, offsets, points), self.buffer)
        np.testing.assert_allclose(out.points, np.tile(world - [1.0, 0.0, 0.0], (3, 1)), atol=1e-12)

    def test_end_points_copied_exactly(self):
        """Test that points at offset zero are unchanged bit for bit."""
        points = np.array([[1.0 / 3.0, 2.0, 0.1], [7.0, -1.0, 1e-3]])
        out = deskew(LidarScan(1.0, [-0.05, 0.0], points), self.buffer)
        np.testing.assert_array_equal(out.points[1], points[1])

    def test_stationary_buffer(self):
        """Test that a stationary platform leaves points unchanged."""
        buffer = PoseBuffer(np.array([0.0, 1.0]), np.stack([np.eye(3), np.eye(3)]), np.zeros((2, 3)))
        points = np.random.default_rng(0).normal(size=(50, 3))
        offsets = -np.linspace(0.1, 0.0, 50)
        out = deskew(LidarScan(1.0, offsets, points), buffer)
        np.testing.assert_allclose(out.points, points, atol=1e-14)

    def test_rotation_is_compensated(self):
        """Test deskewing under a constant yaw rate."""
        buffer = PoseBuffer(
            np.array([0.0, 0.1]),
            np.stack([np.eye(3), so3_exp([0.0, 0.0, 0.2])]),
            np.zeros((2, 3)),
        )
        world = np.array([4.0, 0.0, 0.0])
        # Seen at t = 0.05 with yaw 0.1
        seen = so3_exp([0.0, 0.0, 0.1]).T @ world
        out = deskew(LidarScan(0.1, [-0.05], seen[None]), buffer)
        np.testing.assert_allclose(out.points[0], so3_exp([0.0, 0.0, 0.2]).T @ world, atol=1e-12)

    def test_outside_buffer(self):
        """Test that points before the buffer are rejected."""
        with pytest.raises(DeskewError, match="outside the pose buffer"):
            deskew(LidarScan(1.0, [-0.2, 0.0], np.ones((2, 3))), self.buffer)

    def test_interpolation(self):
        """Test pose interpolation between buffer entries."""
        pose = self.buffer.interpolate(0.95)
        np.testing.assert_allclose(pose.translation, [0.95, 0.0, 0.0])
        with pytest.raises(DeskewError):
            self.buffer.interpolate(1.5)

    def test_crop_blind(self):
        """Test that close and zero-norm points are dropped."""
        scan = LidarScan(1.0, [-0.1, -0.05, 0.0], [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [2.0, 0.0, 0.0]])
        out = crop_blind(scan, 0.3)
        assert len(out) == 1
        np.testing.assert_array_equal(out.points[0], [2.0, 0.0, 0.0])
        assert crop_blind(out, 0.3) is out
