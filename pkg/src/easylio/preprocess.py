"""IMU initialization, forward propagation and scan deskewing."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial.transform import Rotation as ScipyRotation

from easylio.config import Config
from easylio.geometry import (
    BA,
    BG,
    GRAV,
    POS,
    ROT,
    STATE_DIM,
    VEL,
    FloatArray,
    NavState,
    RigidTransform,
    right_jacobian,
    skew,
    so3_exp,
)
from easylio.io import ImuSample, LidarScan

logger = logging.getLogger(__name__)

# Slack on buffer coverage checks (s)
_TIME_TOLERANCE = 1e-9


class InitializationError(ValueError):
    """Exception raised when the static IMU data cannot initialize the filter."""

    pass


class DeskewError(ValueError):
    """Exception raised when a point lies outside the pose buffer."""

    pass


@dataclass(frozen=True, eq=False)
class PoseBuffer:
    """World-from-IMU poses at increasing timestamps.

    Attributes:
        times: ``(k,)`` timestamps (s)
        rotations: ``(k, 3, 3)`` rotations
        positions: ``(k, 3)`` positions (m)
    """

    times: FloatArray
    rotations: FloatArray
    positions: FloatArray

    def __len__(self) -> int:
        """Return the number of poses."""
        return len(self.times)

    @property
    def t_start(self) -> float:
        """First covered timestamp."""
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        """Last covered timestamp."""
        return float(self.times[-1])

    def pose(self, index: int) -> RigidTransform:
        """Return the stored pose at ``index``."""
        return RigidTransform(self.rotations[index], self.positions[index])

    def interpolate_many(self, ts: ArrayLike) -> tuple[FloatArray, FloatArray]:
        """Interpolate poses at many timestamps.

        Positions are interpolated linearly and rotations along the geodesic
        between the bracketing poses.

        Args:
            ts: Timestamps inside ``[t_start, t_end]``

        Returns:
            ``(n, 3, 3)`` rotations and ``(n, 3)`` positions

        Raises:
            DeskewError: If a timestamp is outside the buffer
        """
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        if len(ts) == 0:
            return np.zeros((0, 3, 3)), np.zeros((0, 3))
        outside = (ts < self.t_start - _TIME_TOLERANCE) | (ts > self.t_end + _TIME_TOLERANCE)
        if outside.any():
            bad = float(ts[np.argmax(outside)])
            raise DeskewError(f"Timestamp {bad!r} is outside the pose buffer [{self.t_start!r}, {self.t_end!r}]")
        if len(self.times) == 1:
            return np.repeat(self.rotations, len(ts), axis=0), np.repeat(self.positions, len(ts), axis=0)

        ts = np.clip(ts, self.t_start, self.t_end)
        seg = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, len(self.times) - 2)
        t0 = self.times[seg]
        span = self.times[seg + 1] - t0
        alpha = np.where(span > 0, (ts - t0) / np.where(span > 0, span, 1.0), 0.0)

        r0 = self.rotations[:-1]
        relative = ScipyRotation.from_matrix(np.einsum("kji,kjl->kil", r0, self.rotations[1:])).as_rotvec()
        steps = ScipyRotation.from_rotvec(alpha[:, None] * relative[seg]).as_matrix()
        rotations = np.einsum("nij,njk->nik", r0[seg], steps)
        positions = self.positions[seg] + alpha[:, None] * (self.positions[seg + 1] - self.positions[seg])
        return rotations, positions

    def interpolate(self, t: float) -> RigidTransform:
        """Interpolate the pose at one timestamp."""
        rotations, positions = self.interpolate_many([t])
        return RigidTransform(rotations[0], positions[0])


def initial_covariance(cfg: Config) -> FloatArray:
    """Block-diagonal prior covariance from the configured standard deviations."""
    std = np.empty(STATE_DIM)
    std[POS] = cfg.init_position_std
    std[ROT] = cfg.init_rotation_std
    std[VEL] = cfg.init_velocity_std
    std[BG] = cfg.init_gyro_bias_std
    std[BA] = cfg.init_accel_bias_std
    std[GRAV] = cfg.init_gravity_std
    return np.diag(std**2)


def initialize(static_imu: Sequence[ImuSample], cfg: Config | None = None) -> tuple[NavState, FloatArray]:
    """Initialize state and covariance from a stationary IMU segment.

    Gravity is the negated mean specific force rescaled to ``gravity_norm``,
    the gyro bias is the mean angular rate, and the pose is the identity.

    Args:
        static_imu: Samples recorded while the platform is at rest
        cfg: Configuration (default: ``Config()``)

    Returns:
        Initial state and covariance

    Raises:
        InitializationError: If there are too few samples or the mean specific
            force is not a plausible gravity reading
    """
    cfg = cfg or Config()
    if len(static_imu) < cfg.min_static_samples:
        raise InitializationError(
            f"Initialization needs at least {cfg.min_static_samples} static IMU samples, got {len(static_imu)}"
        )

    mean_acc = np.mean([s.accel for s in static_imu], axis=0)
    mean_gyro = np.mean([s.gyro for s in static_imu], axis=0)
    norm = float(np.linalg.norm(mean_acc))
    if not 8.0 <= norm <= 12.0:
        raise InitializationError(
            f"Mean static acceleration norm {norm:.3f} m/s^2 is outside [8, 12]; platform not stationary or wrong units"
        )

    state = NavState(bias_gyro=mean_gyro, gravity=-mean_acc / norm * cfg.gravity_norm)
    logger.info("Initialized from %d samples: gravity=%s, bias_gyro=%s", len(static_imu), state.gravity, mean_gyro)
    return state, initial_covariance(cfg)


def process_noise(cfg: Config) -> FloatArray:
    """Continuous noise covariance ordered ``(gyro, accel, gyro bias walk, accel bias walk)``."""
    densities = np.repeat([cfg.gyro_noise, cfg.accel_noise, cfg.gyro_bias_walk, cfg.accel_bias_walk], 3)
    return np.diag(densities**2)


def propagate_state(x: NavState, gyro: ArrayLike, accel: ArrayLike, dt: float) -> NavState:
    """Advance the state by one IMU interval holding the reading constant.

    Args:
        x: State at the start of the interval
        gyro: Measured angular rate
        accel: Measured specific force
        dt: Interval length (s)

    Returns:
        State at the end of the interval
    """
    omega = np.asarray(gyro, dtype=np.float64) - x.bias_gyro
    acc_world = x.rotation @ (np.asarray(accel, dtype=np.float64) - x.bias_accel) + x.gravity
    return x.replace(
        position=x.position + x.velocity * dt + 0.5 * acc_world * dt * dt,
        rotation=x.rotation @ so3_exp(omega * dt),
        velocity=x.velocity + acc_world * dt,
    )


def transition_jacobians(x: NavState, gyro: ArrayLike, accel: ArrayLike, dt: float) -> tuple[FloatArray, FloatArray]:
    """Error-state transition and noise Jacobians of :func:`propagate_state`.

    Args:
        x: State at the start of the interval
        gyro: Measured angular rate
        accel: Measured specific force
        dt: Interval length (s)

    Returns:
        ``F`` (18x18) and ``G`` (18x12), with the discrete process noise being
        ``G @ process_noise(cfg) @ G.T * dt``
    """
    phi = (np.asarray(gyro, dtype=np.float64) - x.bias_gyro) * dt
    acc = np.asarray(accel, dtype=np.float64) - x.bias_accel
    r = x.rotation
    r_acc = r @ skew(acc)
    jr = right_jacobian(phi)
    half_dt2 = 0.5 * dt * dt

    f = np.eye(STATE_DIM)
    f[POS, VEL] = dt * np.eye(3)
    f[POS, ROT] = -half_dt2 * r_acc
    f[POS, BA] = -half_dt2 * r
    f[POS, GRAV] = half_dt2 * np.eye(3)
    f[ROT, ROT] = so3_exp(phi).T
    f[ROT, BG] = -jr * dt
    f[VEL, ROT] = -dt * r_acc
    f[VEL, BA] = -dt * r
    f[VEL, GRAV] = dt * np.eye(3)

    g = np.zeros((STATE_DIM, 12))
    g[POS, 3:6] = -0.5 * dt * r
    g[ROT, 0:3] = -jr
    g[VEL, 3:6] = -r
    g[BG, 6:9] = np.eye(3)
    g[BA, 9:12] = np.eye(3)
    return f, g


def forward_propagate(
    x: NavState,
    P: FloatArray,
    imu: Sequence[ImuSample],
    cfg: Config | None = None,
    *,
    t_start: float | None = None,
    t_end: float | None = None,
) -> tuple[NavState, FloatArray, PoseBuffer]:
    """Propagate state and covariance through a run of IMU samples.

    Each interval between consecutive breakpoints (``t_start``, every sample
    time strictly inside, ``t_end``) holds the latest sample at or before its
    start.

    Args:
        x: State at ``t_start``
        P: Covariance at ``t_start``
        imu: Time-sorted samples
        cfg: Configuration with the noise densities (default: ``Config()``)
        t_start: Start time (default: first sample time)
        t_end: End time (default: last sample time)

    Returns:
        State and covariance at ``t_end`` and the pose at every breakpoint
    """
    cfg = cfg or Config()
    if not imu:
        t = t_start if t_start is not None else (t_end if t_end is not None else 0.0)
        return x, P, PoseBuffer(np.array([t]), x.rotation[None].copy(), x.position[None].copy())

    times = np.array([s.t for s in imu])
    t0 = float(times[0]) if t_start is None else float(t_start)
    t1 = float(times[-1]) if t_end is None else float(t_end)
    inner = times[(times > t0) & (times < t1)]
    breaks = np.concatenate([[t0], inner, [t1]]) if t1 > t0 else np.array([t0])

    qc = process_noise(cfg)
    rotations = [x.rotation]
    positions = [x.position]
    P = np.array(P, dtype=np.float64)
    for a, b in zip(breaks[:-1], breaks[1:], strict=True):
        dt = float(b - a)
        sample = imu[max(int(np.searchsorted(times, a, side="right")) - 1, 0)]
        f, g = transition_jacobians(x, sample.gyro, sample.accel, dt)
        x = propagate_state(x, sample.gyro, sample.accel, dt)
        P = f @ P @ f.T + (g @ qc @ g.T) * dt
        rotations.append(x.rotation)
        positions.append(x.position)

    P = 0.5 * (P + P.T)
    return x, P, PoseBuffer(breaks, np.array(rotations), np.array(positions))


def crop_blind(scan: LidarScan, min_range: float) -> LidarScan:
    """Drop returns closer than ``min_range`` (and zero-norm points)."""
    ranges = np.linalg.norm(scan.points, axis=1)
    keep = (ranges >= min_range) & (ranges > 0.0)
    return scan if keep.all() else scan.subset(keep)


def deskew(scan: LidarScan, buffer: PoseBuffer, extrinsic: RigidTransform | None = None) -> LidarScan:
    """Re-express every point in the LiDAR frame at ``t_end``.

    Args:
        scan: Raw scan
        buffer: IMU poses covering the scan interval
        extrinsic: IMU-from-LiDAR transform (default: identity)

    Returns:
        Scan with the same offsets and motion-compensated points

    Raises:
        DeskewError: If a point timestamp is outside the buffer
    """
    if len(scan) == 0:
        return scan
    extrinsic = extrinsic or RigidTransform.identity()

    for offset in (float(scan.offsets.min()), 0.0):
        t = scan.t_end + offset
        if t < buffer.t_start - _TIME_TOLERANCE or t > buffer.t_end + _TIME_TOLERANCE:
            raise DeskewError(
                f"Point offset {offset!r} of scan at t={scan.t_end!r} is outside the pose buffer "
                f"[{buffer.t_start!r}, {buffer.t_end!r}]"
            )

    rotations, positions = buffer.interpolate_many(scan.t_end + scan.offsets)
    end = buffer.interpolate(scan.t_end)

    imu_points = extrinsic.apply(scan.points)
    world = np.einsum("nij,nj->ni", rotations, imu_points) + positions
    local = (world - end.translation) @ end.rotation
    out = extrinsic.inverse().apply(local)

    same = scan.offsets == 0.0
    out[same] = scan.points[same]
    return LidarScan(scan.t_end, scan.offsets.copy(), out)
