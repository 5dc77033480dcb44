"""Rotation and rigid-transform algebra plus the navigation-state manifold.

The error state is ordered ``(dt, dr, dv, dbg, dba, dg)``. Every block is three
wide, so block ``k`` occupies columns ``3k:3k+3``. Rotations use the right
perturbation convention: ``R ⊞ dr = R @ so3_exp(dr)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation as ScipyRotation

FloatArray = NDArray[np.float64]

# Error-state block slices
POS = slice(0, 3)
ROT = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
GRAV = slice(15, 18)
STATE_DIM = 18

_SMALL_ANGLE = 1e-8
_NEAR_PI = 1e-6


def _vec3(v: ArrayLike) -> FloatArray:
    out = np.asarray(v, dtype=np.float64).reshape(3)
    return out


def skew(v: ArrayLike) -> FloatArray:
    """Return the skew-symmetric matrix such that ``skew(v) @ u == cross(v, u)``.

    Args:
        v: 3-vector

    Returns:
        3x3 antisymmetric matrix
    """
    x, y, z = _vec3(v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: ArrayLike) -> FloatArray:
    """Inverse of :func:`skew` applied to the antisymmetric part of ``m``."""
    a = np.asarray(m, dtype=np.float64)
    return 0.5 * np.array([a[2, 1] - a[1, 2], a[0, 2] - a[2, 0], a[1, 0] - a[0, 1]])


def so3_exp(w: ArrayLike) -> FloatArray:
    """Exponential map from a rotation vector to a rotation matrix.

    Uses the Rodrigues formula, falling back to the second-order Taylor series
    ``I + K + K^2/2`` when ``|w| < 1e-8``.

    Args:
        w: Rotation vector in radians

    Returns:
        3x3 rotation matrix
    """
    w = _vec3(w)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def so3_log(rotation: ArrayLike) -> FloatArray:
    """Logarithm map from a rotation matrix to a rotation vector.

    Angles within 1e-6 of pi take the axis from the symmetric part
    ``R + R^T``; the sign is chosen to agree with the antisymmetric part.

    Args:
        rotation: 3x3 rotation matrix

    Returns:
        Rotation vector with norm in [0, pi]
    """
    r = np.asarray(rotation, dtype=np.float64)
    axis_sin = vee(r)  # sin(theta) * axis
    s = float(np.linalg.norm(axis_sin))
    c = 0.5 * (float(np.trace(r)) - 1.0)
    theta = float(np.arctan2(s, c))

    if theta < _SMALL_ANGLE:
        return axis_sin

    if np.pi - theta < _NEAR_PI:
        sym = r + r.T - 2.0 * c * np.eye(3)  # 2 (1 - c) a a^T
        col = int(np.argmax(np.diag(sym)))
        axis = sym[:, col] / np.sqrt(sym[col, col])
        axis /= np.linalg.norm(axis)
        if float(axis @ axis_sin) < 0.0:
            axis = -axis
        return theta * axis

    return (theta / s) * axis_sin


def right_jacobian(w: ArrayLike) -> FloatArray:
    """Right Jacobian of SO(3): ``exp(w + d) ~= exp(w) exp(Jr(w) d)``."""
    w = _vec3(w)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    t2 = theta * theta
    return np.eye(3) - (1.0 - np.cos(theta)) / t2 * k + (theta - np.sin(theta)) / (t2 * theta) * (k @ k)


def right_jacobian_inv(w: ArrayLike) -> FloatArray:
    """Inverse of :func:`right_jacobian`."""
    w = _vec3(w)
    theta = float(np.linalg.norm(w))
    k = skew(w)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * k + (k @ k) / 12.0
    t2 = theta * theta
    coeff = 1.0 / t2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + coeff * (k @ k)


def rotation_to_quaternion(rotation: ArrayLike) -> FloatArray:
    """Convert a rotation matrix to a unit quaternion ``(x, y, z, w)`` with ``w >= 0``."""
    q = ScipyRotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat()
    if q[3] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quaternion_to_rotation(quaternion: ArrayLike) -> FloatArray:
    """Convert a quaternion ``(x, y, z, w)`` to a rotation matrix."""
    return ScipyRotation.from_quat(np.asarray(quaternion, dtype=np.float64)).as_matrix()


def _frozen(a: ArrayLike, shape: tuple[int, ...]) -> FloatArray:
    out = np.array(a, dtype=np.float64).reshape(shape)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rigid-body transform ``p -> R p + t``.

    Attributes:
        rotation: 3x3 rotation matrix
        translation: Translation in meters
    """

    rotation: FloatArray = field(default_factory=lambda: np.eye(3))
    translation: FloatArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        """Freeze copies of the arrays."""
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))

    @classmethod
    def identity(cls) -> RigidTransform:
        """Return the identity transform."""
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec: ArrayLike, translation: ArrayLike) -> RigidTransform:
        """Build a transform from a rotation vector and a translation."""
        return cls(so3_exp(rotvec), np.asarray(translation, dtype=np.float64))

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        """Compose: ``(self @ other)(p) == self(other(p))``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> RigidTransform:
        """Return the inverse transform."""
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply(self, points: ArrayLike) -> FloatArray:
        """Transform a point or an ``(n, 3)`` array of points."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def as_matrix(self) -> FloatArray:
        """Return the 4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        """Return string representation of the transform."""
        return f"RigidTransform(rotvec={so3_log(self.rotation)}, translation={self.translation})"


@dataclass(frozen=True, eq=False)
class NavState:
    """Navigation state on SO(3) x R^15.

    Attributes:
        position: World position of the IMU (m)
        rotation: World-from-IMU rotation matrix
        velocity: World velocity (m/s)
        bias_gyro: Gyroscope bias (rad/s)
        bias_accel: Accelerometer bias (m/s^2)
        gravity: World gravity vector (m/s^2)
    """

    position: FloatArray = field(default_factory=lambda: np.zeros(3))
    rotation: FloatArray = field(default_factory=lambda: np.eye(3))
    velocity: FloatArray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: FloatArray = field(default_factory=lambda: np.zeros(3))
    bias_accel: FloatArray = field(default_factory=lambda: np.zeros(3))
    gravity: FloatArray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    def __post_init__(self) -> None:
        """Freeze copies of the arrays."""
        object.__setattr__(self, "rotation", _frozen(self.rotation, (3, 3)))
        for name in ("position", "velocity", "bias_gyro", "bias_accel", "gravity"):
            object.__setattr__(self, name, _frozen(getattr(self, name), (3,)))

    @property
    def pose(self) -> RigidTransform:
        """World-from-IMU transform."""
        return RigidTransform(self.rotation, self.position)

    def replace(self, **changes: ArrayLike) -> NavState:
        """Return a copy with some blocks replaced."""
        values = {
            "position": self.position,
            "rotation": self.rotation,
            "velocity": self.velocity,
            "bias_gyro": self.bias_gyro,
            "bias_accel": self.bias_accel,
            "gravity": self.gravity,
        }
        values.update(changes)
        return NavState(**values)  # type: ignore[arg-type]

    def is_finite(self) -> bool:
        """Whether every block is finite."""
        return all(
            bool(np.all(np.isfinite(a)))
            for a in (self.position, self.rotation, self.velocity, self.bias_gyro, self.bias_accel, self.gravity)
        )

    def __repr__(self) -> str:
        """Return string representation of the state."""
        return (
            f"NavState(position={self.position}, rotvec={so3_log(self.rotation)}, velocity={self.velocity}, "
            f"bias_gyro={self.bias_gyro}, bias_accel={self.bias_accel}, gravity={self.gravity})"
        )


def boxplus(x: NavState, delta: ArrayLike) -> NavState:
    """Compose a state with an 18-dimensional tangent perturbation.

    Args:
        x: State
        delta: Tangent vector ordered ``(dt, dr, dv, dbg, dba, dg)``

    Returns:
        Perturbed state
    """
    d = np.asarray(delta, dtype=np.float64).reshape(STATE_DIM)
    return NavState(
        position=x.position + d[POS],
        rotation=x.rotation @ so3_exp(d[ROT]),
        velocity=x.velocity + d[VEL],
        bias_gyro=x.bias_gyro + d[BG],
        bias_accel=x.bias_accel + d[BA],
        gravity=x.gravity + d[GRAV],
    )


def boxminus(y: NavState, x: NavState) -> FloatArray:
    """Tangent vector ``d`` such that ``boxplus(x, d) == y``."""
    d = np.empty(STATE_DIM)
    d[POS] = y.position - x.position
    d[ROT] = so3_log(x.rotation.T @ y.rotation)
    d[VEL] = y.velocity - x.velocity
    d[BG] = y.bias_gyro - x.bias_gyro
    d[BA] = y.bias_accel - x.bias_accel
    d[GRAV] = y.gravity - x.gravity
    return d
