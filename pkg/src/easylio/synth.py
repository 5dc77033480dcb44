"""Deterministic synthetic sensor logs.

Worlds are sets of axis-aligned rectangles, so every beam intersection is
exact. Beams fire at timestamps spread linearly over the scan period from the
pose at that instant, which produces real motion distortion. All noise comes
from one ``numpy.random.PCG64`` stream seeded per log, and the seed is stored
in the log metadata.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from typing import Any, Protocol

import numpy as np
from numpy.typing import ArrayLike
from scipy.interpolate import CubicSpline

from easylio.geometry import FloatArray, RigidTransform
from easylio.io import ImuSample, LidarScan, SensorLog, TrajectoryRecord

logger = logging.getLogger(__name__)

GRAVITY = (0.0, 0.0, -9.81)
SCENARIOS = ("box_room", "corridor", "tunnel_transition", "waterway")

# Smallest hit distance along a beam (m)
_MIN_HIT = 1e-9


@dataclass(frozen=True)
class Surface:
    """Axis-aligned rectangle.

    Attributes:
        axis: Axis the rectangle is perpendicular to (0, 1 or 2)
        offset: Coordinate of the rectangle on that axis (m)
        lo: Lower bounds on the two other axes, in increasing axis order (m)
        hi: Upper bounds on the two other axes (m)
        reflective: False for surfaces that absorb beams (water)
    """

    axis: int
    offset: float
    lo: tuple[float, float]
    hi: tuple[float, float]
    reflective: bool = True

    def __post_init__(self) -> None:
        """Validate the rectangle."""
        if self.axis not in (0, 1, 2):
            raise ValueError(f"Surface axis must be 0, 1 or 2, got {self.axis}")
        if not (self.hi[0] > self.lo[0] and self.hi[1] > self.lo[1]):
            raise ValueError(f"Surface must have positive area, got lo={self.lo}, hi={self.hi}")

    @property
    def in_plane_axes(self) -> tuple[int, int]:
        """The two axes spanning the rectangle."""
        a, b = (i for i in range(3) if i != self.axis)
        return a, b


def box_surfaces(lo: Sequence[float], hi: Sequence[float], *, bottom: bool = True) -> list[Surface]:
    """The faces of an axis-aligned box (the bottom face optional)."""
    surfaces = []
    for axis in range(3):
        a, b = (i for i in range(3) if i != axis)
        for offset in (lo[axis], hi[axis]):
            if axis == 2 and offset == lo[2] and not bottom:
                continue
            surfaces.append(Surface(axis, float(offset), (float(lo[a]), float(lo[b])), (float(hi[a]), float(hi[b]))))
    return surfaces


def _rect(axis: int, offset: float, lo: Sequence[float], hi: Sequence[float], reflective: bool = True) -> Surface:
    return Surface(axis, float(offset), (float(lo[0]), float(lo[1])), (float(hi[0]), float(hi[1])), reflective)


@dataclass(frozen=True)
class World:
    """A set of rectangles.

    Attributes:
        surfaces: All rectangles, absorbing ones included
    """

    surfaces: tuple[Surface, ...]

    def raycast(
        self,
        origins: ArrayLike,
        directions: ArrayLike,
        max_range: float = math.inf,
        min_range: float = 0.0,
    ) -> FloatArray:
        """First-hit distance along each beam.

        Args:
            origins: ``(n, 3)`` beam origins
            directions: ``(n, 3)`` unit directions
            max_range: Returns beyond this are dropped
            min_range: Returns closer than this are dropped

        Returns:
            ``(n,)`` distances, ``inf`` where the beam misses or hits an
            absorbing surface first
        """
        o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
        best = np.full(len(o), np.inf)
        reflective = np.zeros(len(o), dtype=bool)
        with np.errstate(divide="ignore", invalid="ignore"):
            for s in self.surfaces:
                a, b = s.in_plane_axes
                t = (s.offset - o[:, s.axis]) / d[:, s.axis]
                hit = np.isfinite(t) & (t > _MIN_HIT) & (t < best)
                pa = o[:, a] + t * d[:, a]
                pb = o[:, b] + t * d[:, b]
                hit &= (pa >= s.lo[0]) & (pa <= s.hi[0]) & (pb >= s.lo[1]) & (pb <= s.hi[1])
                best[hit] = t[hit]
                reflective[hit] = s.reflective
        valid = reflective & (best <= max_range) & (best >= min_range)
        return np.where(valid, best, np.inf)


class Trajectory(Protocol):
    """Analytic world-from-IMU motion with yaw-only rotation."""

    def kinematics(self, ts: ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, FloatArray]:
        """Positions, velocities, accelerations, rotations and body angular rates at ``ts``."""
        ...


def _yaw_matrices(yaw: FloatArray) -> FloatArray:
    c, s = np.cos(yaw), np.sin(yaw)
    r = np.zeros((len(yaw), 3, 3))
    r[:, 0, 0] = c
    r[:, 0, 1] = -s
    r[:, 1, 0] = s
    r[:, 1, 1] = c
    r[:, 2, 2] = 1.0
    return r


class SplineTrajectory:
    """Clamped cubic-spline path through waypoints, at rest during a lead-in.

    Args:
        times: Waypoint times starting at 0 (s), measured after the lead-in
        positions: ``(k, 3)`` waypoints (m)
        yaws: ``(k,)`` headings (rad)
        lead_in: Time spent at rest on the first waypoint before moving (s)
    """

    def __init__(self, times: ArrayLike, positions: ArrayLike, yaws: ArrayLike, lead_in: float = 1.0) -> None:
        """Fit the splines."""
        self.times = np.asarray(times, dtype=np.float64)
        if self.times[0] != 0.0:
            raise ValueError("Waypoint times must start at 0")
        self.lead_in = float(lead_in)
        self._position = CubicSpline(self.times, np.asarray(positions, dtype=np.float64), axis=0, bc_type="clamped")
        self._yaw = CubicSpline(self.times, np.asarray(yaws, dtype=np.float64), bc_type="clamped")

    @property
    def end_time(self) -> float:
        """Time the motion stops."""
        return self.lead_in + float(self.times[-1])

    def kinematics(self, ts: ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, FloatArray]:
        """Positions, velocities, accelerations, rotations and body angular rates at ``ts``."""
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        s = np.clip(ts - self.lead_in, 0.0, self.times[-1])
        moving = ((ts > self.lead_in) & (ts < self.end_time))[:, None]
        position = self._position(s)
        velocity = np.where(moving, self._position(s, 1), 0.0)
        acceleration = np.where(moving, self._position(s, 2), 0.0)
        yaw = self._yaw(s)
        rates = np.zeros((len(ts), 3))
        rates[:, 2] = np.where(moving[:, 0], self._yaw(s, 1), 0.0)
        return position, velocity, acceleration, _yaw_matrices(yaw), rates


class CircularTrajectory:
    """Constant-rate horizontal circle, heading along the tangent.

    Args:
        radius: Circle radius (m)
        omega: Angular rate (rad/s)
        center: Circle center (m)
    """

    def __init__(self, radius: float, omega: float, center: Sequence[float] = (0.0, 0.0, 0.0)) -> None:
        """Store the parameters."""
        self.radius = float(radius)
        self.omega = float(omega)
        self.center = np.asarray(center, dtype=np.float64)

    def kinematics(self, ts: ArrayLike) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, FloatArray]:
        """Positions, velocities, accelerations, rotations and body angular rates at ``ts``."""
        ts = np.asarray(ts, dtype=np.float64).reshape(-1)
        angle = self.omega * ts
        c, s = np.cos(angle), np.sin(angle)
        zero = np.zeros_like(ts)
        position = self.center + self.radius * np.column_stack([c, s, zero])
        velocity = self.radius * self.omega * np.column_stack([-s, c, zero])
        acceleration = -self.radius * self.omega**2 * np.column_stack([c, s, zero])
        rates = np.column_stack([zero, zero, np.full_like(ts, self.omega)])
        return position, velocity, acceleration, _yaw_matrices(angle + 0.5 * math.pi), rates


def trajectory_poses(trajectory: Trajectory, ts: ArrayLike) -> tuple[FloatArray, FloatArray]:
    """Rotations and positions of a trajectory at ``ts``."""
    position, _, _, rotation, _ = trajectory.kinematics(ts)
    return rotation, position


@dataclass(frozen=True)
class TrajectorySpec:
    """A trajectory with its timing.

    Attributes:
        trajectory: The motion
        duration: Log length including the lead-in (s)
        lead_in: Initial rest period (s)
        imu_rate: IMU sample rate (Hz)
        scan_rate: Scan rate (Hz)
    """

    trajectory: Any
    duration: float
    lead_in: float = 1.0
    imu_rate: float = 200.0
    scan_rate: float = 10.0


@dataclass(frozen=True)
class LidarModel:
    """Spinning multi-channel LiDAR.

    Attributes:
        channels: Number of beams per azimuth step
        vertical_fov: Lowest and highest elevation (rad)
        azimuth_steps: Firings per revolution
        max_range: Longest return (m)
        min_range: Shortest return (m)
        range_sigma: Range noise (m)
        bearing_sigma: Direction noise (rad)
        azimuth_jitter: Start each sweep at a random azimuth phase within one step, so that
            successive sweeps do not fire along identical bearings
        elevation_jitter: Tilt each sweep by a random elevation offset within half a channel
            spacing, so that successive sweeps do not trace identical rings on the ground
    """

    channels: int = 16
    vertical_fov: tuple[float, float] = (math.radians(-45.0), math.radians(45.0))
    azimuth_steps: int = 360
    max_range: float = 100.0
    min_range: float = 0.1
    range_sigma: float = 0.0
    bearing_sigma: float = 0.0
    azimuth_jitter: bool = True
    elevation_jitter: bool = True

    def __post_init__(self) -> None:
        """Validate the model."""
        if self.channels < 1 or self.azimuth_steps < 1:
            raise ValueError("LiDAR channels and azimuth steps must be positive")
        if not self.max_range > 0:
            raise ValueError(f"LiDAR max range must be positive, got {self.max_range}")

    @classmethod
    def realistic(cls, **overrides: Any) -> LidarModel:
        """A model with 2 cm range noise and 0.05 degree bearing noise."""
        return cls(**{"range_sigma": 0.02, "bearing_sigma": math.radians(0.05), **overrides})

    @property
    def channel_spacing(self) -> float:
        """Elevation step between adjacent channels (rad), 0 for a single channel."""
        if self.channels < 2:
            return 0.0
        return (self.vertical_fov[1] - self.vertical_fov[0]) / (self.channels - 1)

    def directions(self, phase: float = 0.0, tilt: float = 0.0) -> FloatArray:
        """Unit beam directions ``(azimuth_steps * channels, 3)``, azimuth-major.

        Args:
            phase: Azimuth offset of the first step (rad)
            tilt: Elevation offset added to every channel (rad)
        """
        elevation = np.linspace(self.vertical_fov[0], self.vertical_fov[1], self.channels) + tilt
        azimuth = phase + 2.0 * math.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
        az, el = np.meshgrid(azimuth, elevation, indexing="ij")
        return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1).reshape(-1, 3)


@dataclass(frozen=True)
class ImuModel:
    """IMU error model.

    Attributes:
        gyro_density: Gyroscope white-noise density (rad/s/sqrt(Hz))
        accel_density: Accelerometer white-noise density (m/s^2/sqrt(Hz))
        gyro_bias: Constant gyroscope bias (rad/s)
        accel_bias: Constant accelerometer bias (m/s^2)
    """

    gyro_density: float = 0.0
    accel_density: float = 0.0
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def realistic(cls, **overrides: Any) -> ImuModel:
        """A consumer-grade MEMS noise level."""
        return cls(**{"gyro_density": 2e-4, "accel_density": 2e-3, **overrides})


def synthesize_imu(
    trajectory: Trajectory,
    times: ArrayLike,
    model: ImuModel | None = None,
    gravity: Sequence[float] = GRAVITY,
    rng: np.random.Generator | None = None,
) -> list[ImuSample]:
    """IMU readings along a trajectory.

    The accelerometer reads ``R^T (a - g) + b_a`` and the gyroscope the body
    angular rate plus ``b_g``. White noise has standard deviation
    ``density * sqrt(rate)``.

    Args:
        trajectory: Motion to measure
        times: Sample times (s), evenly spaced when noise is on
        model: Error model (default: noise-free and unbiased)
        gravity: World gravity vector
        rng: Noise source (default: ``PCG64(0)``)

    Returns:
        One sample per time
    """
    model = model or ImuModel()
    rng = rng or np.random.Generator(np.random.PCG64(0))
    ts = np.asarray(times, dtype=np.float64).reshape(-1)
    _, _, acceleration, rotation, rates = trajectory.kinematics(ts)
    specific = np.einsum("nji,nj->ni", rotation, acceleration - np.asarray(gravity, dtype=np.float64))
    gyro = rates + np.asarray(model.gyro_bias)
    accel = specific + np.asarray(model.accel_bias)

    if len(ts) > 1 and (model.gyro_density > 0 or model.accel_density > 0):
        sqrt_rate = math.sqrt(1.0 / float(np.mean(np.diff(ts))))
        gyro = gyro + rng.normal(0.0, model.gyro_density * sqrt_rate, gyro.shape)
        accel = accel + rng.normal(0.0, model.accel_density * sqrt_rate, accel.shape)

    return [ImuSample(float(t), g.copy(), a.copy()) for t, g, a in zip(ts, gyro, accel, strict=True)]


def raycast_scan(
    world: World,
    model: LidarModel,
    t_end: float,
    scan_period: float,
    pose_fn: Any,
    *,
    rng: np.random.Generator | None = None,
    extrinsic: RigidTransform | None = None,
) -> LidarScan:
    """Simulate one sweep.

    Azimuth step ``i`` fires at ``t_end - scan_period * (1 - (i + 1) / azimuth_steps)``
    from the pose at that time, so the last step has offset 0.

    Args:
        world: Geometry to scan
        model: LiDAR model
        t_end: Time of the last firing (s)
        scan_period: Sweep duration (s)
        pose_fn: ``f(times) -> (rotations, positions)`` world-from-IMU poses
        rng: Noise source (default: ``PCG64(0)``)
        extrinsic: IMU-from-LiDAR transform (default: identity)

    Returns:
        Returns in beam order, each in the LiDAR frame of its firing time
    """
    rng = rng or np.random.Generator(np.random.PCG64(0))
    extrinsic = extrinsic or RigidTransform.identity()
    steps = model.azimuth_steps
    phase = rng.uniform(0.0, 2.0 * math.pi / steps) if model.azimuth_jitter else 0.0
    half = 0.5 * model.channel_spacing
    tilt = rng.uniform(-half, half) if model.elevation_jitter and half > 0 else 0.0
    directions = model.directions(phase, tilt)
    offsets = -scan_period * (1.0 - (np.arange(steps) + 1.0) / steps)
    offsets[-1] = 0.0

    rotations, positions = pose_fn(t_end + offsets)
    lidar_rot = np.einsum("nij,jk->nik", rotations, extrinsic.rotation)
    origins = positions + np.einsum("nij,j->ni", rotations, extrinsic.translation)
    beam_rot = np.repeat(lidar_rot, model.channels, axis=0)
    beam_origin = np.repeat(origins, model.channels, axis=0)
    world_dirs = np.einsum("nij,nj->ni", beam_rot, directions)

    ranges = world.raycast(beam_origin, world_dirs, model.max_range, model.min_range)
    noise = rng.normal(0.0, 1.0, (len(directions), 3))
    hit = np.isfinite(ranges)

    measured_dirs = directions
    if model.bearing_sigma > 0:
        # Perturb the direction inside the plane perpendicular to the beam
        helper = np.where(np.abs(directions[:, 2:3]) < 0.9, [[0.0, 0.0, 1.0]], [[1.0, 0.0, 0.0]])
        e1 = np.cross(directions, helper)
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(directions, e1)
        measured_dirs = directions + model.bearing_sigma * (noise[:, 0:1] * e1 + noise[:, 1:2] * e2)
        measured_dirs /= np.linalg.norm(measured_dirs, axis=1, keepdims=True)
    measured_range = ranges + model.range_sigma * noise[:, 2]

    points = measured_dirs[hit] * measured_range[hit, None]
    return LidarScan(t_end, np.repeat(offsets, model.channels)[hit], points)


def _spline(
    lead_in: float,
    motion_time: float,
    positions: Sequence[Sequence[float]],
    yaws: Sequence[float],
) -> SplineTrajectory:
    times = np.linspace(0.0, motion_time, len(positions))
    return SplineTrajectory(times, positions, yaws, lead_in)


def _box_room(duration: float, lead_in: float) -> tuple[World, SplineTrajectory]:
    # 10 m cube; faces kept off the 0.5 m voxel lattice
    surfaces = box_surfaces((-4.95, -4.95, -4.95), (5.05, 5.05, 5.05))
    positions = [(0, 0, 0), (1.5, 0.8, 0.2), (1.0, 2.0, 0.4), (-1.2, 1.5, 0.2), (-1.5, -0.8, 0.0), (0, 0, 0)]
    yaws = [0.0, 0.4, 1.0, 1.6, 0.8, 0.0]
    return World(tuple(surfaces)), _spline(lead_in, duration - lead_in, positions, yaws)


def _corridor(duration: float, lead_in: float) -> tuple[World, SplineTrajectory]:
    x0, x1, half, floor, ceiling = -3.05, 40.05, 1.2, -1.05, 1.45
    surfaces = box_surfaces((x0, -half, floor), (x1, half, ceiling))
    # Shallow pillars along alternating walls
    for i, x in enumerate(np.arange(1.05, 38.0, 4.0)):
        side = 1.0 if i % 2 == 0 else -1.0
        y_in, y_out = side * (half - 0.25), side * half
        surfaces += box_surfaces((x, min(y_in, y_out), floor), (x + 0.3, max(y_in, y_out), ceiling), bottom=False)
    motion = duration - lead_in
    length = min(1.0 * motion, 35.0)
    k = 7
    positions = [(length * i / (k - 1), 0.3 * math.sin(math.pi * i / 2), 0.0) for i in range(k)]
    positions[0] = (0.0, 0.0, 0.0)
    yaws = [0.0] + [0.15 * math.sin(math.pi * i / 2 + 0.5) for i in range(1, k - 1)] + [0.0]
    return World(tuple(surfaces)), _spline(lead_in, motion, positions, yaws)


TUNNEL_DUCT = (27.05, 42.05)
TUNNEL_FUNNEL = 12.0
TUNNEL_NARROW_HALF = 1.05
TUNNEL_WIDE_HALF = 45.05

# (x0, x1, half width, floor, ceiling) of one box section of a passage
Section = tuple[float, float, float, float, float]


def passage_surfaces(sections: Sequence[Section]) -> list[Surface]:
    """Walls of a passage built from box sections placed end to end along x.

    Of two neighbouring sections, the wider one must also have the lower floor
    and the higher ceiling. The step between them is closed by a vertical face,
    and both ends of the passage are capped.
    """
    surfaces = []
    for x0, x1, half, floor, ceiling in sections:
        surfaces.append(_rect(2, floor, (x0, -half), (x1, half)))
        surfaces.append(_rect(2, ceiling, (x0, -half), (x1, half)))
        surfaces.append(_rect(1, half, (x0, floor), (x1, ceiling)))
        surfaces.append(_rect(1, -half, (x0, floor), (x1, ceiling)))

    for a, b in zip(sections[:-1], sections[1:], strict=True):
        outer, inner = (a, b) if a[2] > b[2] else (b, a)
        _, _, w_out, f_out, c_out = outer
        _, _, w_in, f_in, c_in = inner
        bands = (
            ((w_in, f_out), (w_out, c_out)),
            ((-w_out, f_out), (-w_in, c_out)),
            ((-w_in, c_in), (w_in, c_out)),
            ((-w_in, f_out), (w_in, f_in)),
        )
        surfaces += [_rect(0, a[1], lo, hi) for lo, hi in bands if lo[0] < hi[0] and lo[1] < hi[1]]

    first, last = sections[0], sections[-1]
    surfaces.append(_rect(0, first[0], (-first[2], first[3]), (first[2], first[4])))
    surfaces.append(_rect(0, last[1], (-last[2], last[3]), (last[2], last[4])))
    return surfaces


def _tunnel_transition(duration: float, lead_in: float) -> tuple[World, SplineTrajectory]:
    # Two tall halls joined by a narrow duct, with a stepped funnel at each duct mouth
    hall_floor, hall_roof, x0, x1 = -4.05, 35.05, -110.05, 160.05
    duct_floor, duct_ceiling = -1.05, 1.45
    mouth_half, mouth_ceiling, steps = 20.0, 20.0, 4
    narrow, wide = TUNNEL_NARROW_HALF, TUNNEL_WIDE_HALF
    d0, d1 = TUNNEL_DUCT
    step = TUNNEL_FUNNEL / steps

    def funnel(r: float) -> tuple[float, float, float]:
        # r runs from 0 at the hall to 1 at the duct
        return (
            mouth_half * (narrow / mouth_half) ** r,
            duct_floor + (hall_floor - duct_floor) * (1.0 - r),
            duct_ceiling + (mouth_ceiling - duct_ceiling) * (1.0 - r),
        )

    sections: list[Section] = [(x0, d0 - TUNNEL_FUNNEL, wide, hall_floor, hall_roof)]
    for i in range(steps):
        start = d0 - TUNNEL_FUNNEL + i * step
        sections.append((start, start + step, *funnel((i + 0.5) / steps)))
    sections.append((d0, d1, narrow, duct_floor, duct_ceiling))
    for i in range(steps):
        start = d1 + i * step
        sections.append((start, start + step, *funnel(1.0 - (i + 0.5) / steps)))
    sections.append((d1 + TUNNEL_FUNNEL, x1, wide, hall_floor, hall_roof))

    motion = duration - lead_in
    length = min(1.5 * motion, 100.0)
    k = max(int(length // 5.0) + 1, 3)
    positions = [(length * i / (k - 1), 0.2 * math.sin(0.9 * i), 0.0) for i in range(k)]
    positions[0] = (0.0, 0.0, 0.0)
    yaws = [0.0] + [0.08 * math.sin(0.7 * i) for i in range(1, k - 1)] + [0.0]
    return World(tuple(passage_surfaces(sections))), _spline(lead_in, motion, positions, yaws)


WATERWAY_BANK = 6.05


def _waterway(duration: float, lead_in: float) -> tuple[World, SplineTrajectory]:
    water, bank_top, far, x0, x1 = -1.05, -0.45, 25.05, -20.05, 120.05
    bank = WATERWAY_BANK
    surfaces = [_rect(2, water, (x0, -bank), (x1, bank), reflective=False)]
    for side in (1.0, -1.0):
        y_lo, y_hi = sorted((side * bank, side * far))
        surfaces.append(_rect(1, side * bank, (x0, water), (x1, bank_top)))
        surfaces.append(_rect(2, bank_top, (x0, y_lo), (x1, y_hi)))
        surfaces.append(_rect(1, side * far, (x0, bank_top), (x1, 10.05)))
        # Bollards along the bank edge
        for x in np.arange(x0 + 1.1, x1, 3.0):
            y_in = side * (bank + 0.15)
            y_out = side * (bank + 0.35)
            surfaces += box_surfaces((x, min(y_in, y_out), bank_top), (x + 0.2, max(y_in, y_out), 0.35), bottom=False)

    motion = duration - lead_in
    length = min(1.5 * motion, 100.0)
    k = max(int(length // 6.0) + 1, 3)
    positions = [(length * i / (k - 1), 1.0 * math.sin(0.8 * i), 0.0) for i in range(k)]
    positions[0] = (0.0, 0.0, 0.0)
    yaws = [0.0] + [0.3 * math.sin(0.8 * i + 0.6) for i in range(1, k - 1)] + [0.0]
    return World(tuple(surfaces)), _spline(lead_in, motion, positions, yaws)


_BUILDERS = {
    "box_room": _box_room,
    "corridor": _corridor,
    "tunnel_transition": _tunnel_transition,
    "waterway": _waterway,
}
_DEFAULT_DURATION = {"box_room": 60.0, "corridor": 36.0, "tunnel_transition": 50.0, "waterway": 60.0}


def scenario(
    name: str,
    duration: float | None = None,
    lead_in: float = 1.0,
    imu_rate: float = 200.0,
    scan_rate: float = 10.0,
) -> tuple[World, TrajectorySpec]:
    """Build a named world and its trajectory.

    Every trajectory starts at rest at the origin with zero heading.

    Args:
        name: One of ``SCENARIOS``
        duration: Log length including the lead-in (s)
        lead_in: Initial rest period (s)
        imu_rate: IMU sample rate (Hz)
        scan_rate: Scan rate (Hz)

    Returns:
        World and trajectory spec

    Raises:
        ValueError: If the name is unknown or the duration is too short
    """
    if name not in _BUILDERS:
        raise ValueError(f"Scenario '{name}' not found. Available scenarios: " + ", ".join(SCENARIOS))
    duration = _DEFAULT_DURATION[name] if duration is None else float(duration)
    if duration <= lead_in:
        raise ValueError(f"Scenario duration {duration} must exceed the lead-in {lead_in}")
    world, trajectory = _BUILDERS[name](duration, lead_in)
    return world, TrajectorySpec(trajectory, duration, lead_in, imu_rate, scan_rate)


@dataclass(frozen=True)
class GeneratedLog:
    """A synthetic log with the metadata needed to regenerate it."""

    log: SensorLog
    metadata: dict[str, Any] = field(default_factory=dict)


def generate_log(
    name: str,
    seed: int = 0,
    *,
    duration: float | None = None,
    lidar: LidarModel | None = None,
    imu: ImuModel | None = None,
    lead_in: float = 1.0,
    imu_rate: float = 200.0,
    scan_rate: float = 10.0,
    extrinsic: RigidTransform | None = None,
) -> GeneratedLog:
    """Simulate a complete sensor log of a scenario.

    Args:
        name: Scenario name
        seed: 64-bit seed of the ``PCG64`` noise stream
        duration: Log length including the lead-in (s)
        lidar: LiDAR model (default: noise-free ``LidarModel()``)
        imu: IMU model (default: noise-free ``ImuModel()``)
        lead_in: Initial rest period (s)
        imu_rate: IMU sample rate (Hz)
        scan_rate: Scan rate (Hz)
        extrinsic: IMU-from-LiDAR transform (default: identity)

    Returns:
        The log, with ground truth at every IMU sample, and its metadata
    """
    lidar = lidar or LidarModel()
    imu = imu or ImuModel()
    world, spec = scenario(name, duration, lead_in, imu_rate, scan_rate)
    rng = np.random.Generator(np.random.PCG64(seed))

    n_imu = int(math.floor(spec.duration * imu_rate + 1e-9)) + 1
    imu_times = np.arange(n_imu) / imu_rate
    samples = synthesize_imu(spec.trajectory, imu_times, imu, GRAVITY, rng)

    def pose_fn(ts: ArrayLike) -> tuple[FloatArray, FloatArray]:
        return trajectory_poses(spec.trajectory, ts)

    period = 1.0 / scan_rate
    n_scans = int(math.floor((spec.duration - lead_in) * scan_rate + 1e-9))
    scans = [
        raycast_scan(world, lidar, round(lead_in + k * period, 9), period, pose_fn, rng=rng, extrinsic=extrinsic)
        for k in range(1, n_scans + 1)
    ]

    rotations, positions = pose_fn(imu_times)
    ground_truth = [
        TrajectoryRecord.from_pose(float(t), RigidTransform(r, p))
        for t, r, p in zip(imu_times, rotations, positions, strict=True)
    ]

    metadata = {
        "scenario": name,
        "seed": int(seed),
        "generator": "numpy.random.PCG64",
        "duration": spec.duration,
        "lead_in": lead_in,
        "imu_rate": imu_rate,
        "scan_rate": scan_rate,
        "lidar": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(lidar).items()},
        "imu": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(imu).items()},
    }
    logger.info("Generated '%s' (seed %d): %d IMU samples, %d scans", name, seed, len(samples), len(scans))
    return GeneratedLog(SensorLog(samples, scans, ground_truth), metadata)
