"""Run configuration: defaults, validation and TOML persistence."""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, fields
from typing import Any

import tomli
import tomli_w

from easylio.geometry import RigidTransform

CONTROLLERS = (
    "pd_scheduled",
    "fixed",
    "linear_scaling",
    "threshold_switch",
    "volume_scaling",
    "pd_fixed_gains",
    "pd_no_scale",
    "pd_no_error",
)
SEARCHERS = ("pruned", "all26", "face6")


class ConfigError(ValueError):
    """Exception raised when a configuration key is unknown, mistyped or out of range."""

    pass


@dataclass(frozen=True)
class Config:
    """Every user parameter of the odometry pipeline.

    Attributes are grouped into TOML tables by ``SECTIONS``. Defaults follow the
    reference configuration of the adaptive voxelization and hybrid update.
    """

    # [adavox]
    window_size: int = 5
    n_min: int = 1000
    n_max: int = 4000
    setpoint_power: float = 2.0
    tau_m: float = 30.0
    lambda_p: float = 0.1
    lambda_d: float = 0.2
    d_min: float = 0.02
    d_max: float = 1.0
    kp_min: float = 1e-6
    kp_max: float = 1e-4
    kd_min: float = 1e-9
    kd_max: float = 1e-7
    d_initial: float = 0.25
    controller: str = "pd_scheduled"

    # [baselines]
    n_desired_fixed: int = 3000
    d_coarse: float = 0.25
    d_fine: float = 0.05
    tau_n: int = 1000
    d_temp: float = 0.25

    # [voxelmap]
    d_root: float = 0.5
    tau_closest: float | None = None
    max_points_per_voxel: int = 50
    min_plane_points: int = 5
    plane_threshold: float = 0.01
    map_crop_radius: float | None = None
    searcher: str = "pruned"

    # [estimator]
    lambda_po: float = 0.1
    tau_converge: float = 1e-3
    max_iterations: int = 5
    hybrid_metric: bool = True
    discretization_variance: bool = True
    range_sigma: float = 0.02
    bearing_sigma: float = math.radians(0.05)

    # [imu]
    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias_walk: float = 1e-5
    accel_bias_walk: float = 1e-4
    gravity_norm: float = 9.81
    min_static_samples: int = 20
    init_position_std: float = 1e-3
    init_rotation_std: float = 1e-3
    init_velocity_std: float = 1e-2
    init_gyro_bias_std: float = 1e-3
    init_accel_bias_std: float = 1e-2
    init_gravity_std: float = 1e-3

    # [extrinsic]
    extrinsic_rotvec: tuple[float, float, float] = (0.0, 0.0, 0.0)
    extrinsic_translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    # [pipeline]
    scan_period: float = 0.1
    min_range: float = 0.3

    def __post_init__(self) -> None:
        """Normalize numeric types and validate every invariant."""
        for f in fields(self):
            object.__setattr__(self, f.name, _coerce(f.name, f.type, getattr(self, f.name)))
        self._validate()

    @property
    def closest_threshold(self) -> float:
        """Outlier threshold of the point search, ``d_root / 3`` unless set."""
        return self.d_root / 3.0 if self.tau_closest is None else self.tau_closest

    @property
    def exact_search(self) -> bool:
        """Whether the pruned search is guaranteed to match the exhaustive one."""
        return self.closest_threshold <= self.d_root / 3.0 + 1e-15

    @property
    def extrinsic(self) -> RigidTransform:
        """IMU-from-LiDAR transform."""
        return RigidTransform.from_rotvec(self.extrinsic_rotvec, self.extrinsic_translation)

    def replace(self, **changes: Any) -> Config:
        """Return a validated copy with some keys changed.

        Raises:
            ConfigError: If a key is unknown or the result is invalid
        """
        for key in changes:
            if key not in _FIELD_NAMES:
                raise ConfigError(f"Unknown configuration key: '{key}'")
        return Config(**{**asdict(self), **changes})

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> Config:
        """Build a configuration from a (possibly sectioned) mapping.

        Args:
            data: Keys at top level or grouped in the tables of ``SECTIONS``

        Returns:
            Validated configuration

        Raises:
            ConfigError: If a key is unknown, misplaced or invalid
        """
        flat: dict[str, Any] = {}
        for key, value in data.items():
            if key in SECTIONS and isinstance(value, dict):
                for sub_key, sub_value in value.items():
                    if sub_key not in SECTIONS[key]:
                        raise ConfigError(f"Unknown configuration key: '{key}.{sub_key}'")
                    flat[sub_key] = sub_value
            elif key in _FIELD_NAMES:
                flat[key] = value
            else:
                raise ConfigError(f"Unknown configuration key: '{key}'")
        return cls(**flat)

    def to_mapping(self) -> dict[str, dict[str, Any]]:
        """Return the sectioned mapping written by :func:`write_config`; unset optionals are omitted."""
        out: dict[str, dict[str, Any]] = {}
        for section, keys in SECTIONS.items():
            table: dict[str, Any] = {}
            for key in keys:
                value = getattr(self, key)
                if value is None:
                    continue
                table[key] = list(value) if isinstance(value, tuple) else value
            out[section] = table
        return out

    def _validate(self) -> None:
        positive = (
            "window_size n_min n_max setpoint_power tau_m lambda_p lambda_d d_min d_max kp_min kp_max "
            "kd_min kd_max d_initial n_desired_fixed d_coarse d_fine tau_n d_temp d_root max_points_per_voxel "
            "min_plane_points plane_threshold lambda_po tau_converge max_iterations gravity_norm "
            "min_static_samples scan_period"
        ).split()
        for key in positive:
            value = getattr(self, key)
            if not value > 0:
                raise ConfigError(f"Configuration key '{key}' must be positive, got {value}")

        non_negative = (
            "range_sigma bearing_sigma gyro_noise accel_noise gyro_bias_walk accel_bias_walk init_position_std "
            "init_rotation_std init_velocity_std init_gyro_bias_std init_accel_bias_std init_gravity_std min_range"
        ).split()
        for key in non_negative:
            value = getattr(self, key)
            if not value >= 0:
                raise ConfigError(f"Configuration key '{key}' must be non-negative, got {value}")

        for lo, hi in (("n_min", "n_max"), ("d_min", "d_max"), ("kp_min", "kp_max"), ("kd_min", "kd_max")):
            if getattr(self, lo) > getattr(self, hi):
                raise ConfigError(
                    f"Configuration key '{lo}' ({getattr(self, lo)}) must not exceed '{hi}' ({getattr(self, hi)})"
                )

        if not self.d_min <= self.d_initial <= self.d_max:
            raise ConfigError(f"Configuration key 'd_initial' ({self.d_initial}) must lie in [d_min, d_max]")
        if self.min_plane_points < 3:
            raise ConfigError("Configuration key 'min_plane_points' must be at least 3")
        if self.max_points_per_voxel < self.min_plane_points:
            raise ConfigError("Configuration key 'max_points_per_voxel' must be at least 'min_plane_points'")
        for key in ("tau_closest", "map_crop_radius"):
            value = getattr(self, key)
            if value is not None and not value > 0:
                raise ConfigError(f"Configuration key '{key}' must be positive, got {value}")
        if self.controller not in CONTROLLERS:
            raise ConfigError(
                f"Configuration key 'controller' has unknown value '{self.controller}'. "
                f"Available controllers: " + ", ".join(CONTROLLERS)
            )
        if self.searcher not in SEARCHERS:
            raise ConfigError(
                f"Configuration key 'searcher' has unknown value '{self.searcher}'. "
                f"Available searchers: " + ", ".join(SEARCHERS)
            )


SECTIONS: dict[str, tuple[str, ...]] = {
    "adavox": (
        "window_size",
        "n_min",
        "n_max",
        "setpoint_power",
        "tau_m",
        "lambda_p",
        "lambda_d",
        "d_min",
        "d_max",
        "kp_min",
        "kp_max",
        "kd_min",
        "kd_max",
        "d_initial",
        "controller",
    ),
    "baselines": ("n_desired_fixed", "d_coarse", "d_fine", "tau_n", "d_temp"),
    "voxelmap": (
        "d_root",
        "tau_closest",
        "max_points_per_voxel",
        "min_plane_points",
        "plane_threshold",
        "map_crop_radius",
        "searcher",
    ),
    "estimator": (
        "lambda_po",
        "tau_converge",
        "max_iterations",
        "hybrid_metric",
        "discretization_variance",
        "range_sigma",
        "bearing_sigma",
    ),
    "imu": (
        "gyro_noise",
        "accel_noise",
        "gyro_bias_walk",
        "accel_bias_walk",
        "gravity_norm",
        "min_static_samples",
        "init_position_std",
        "init_rotation_std",
        "init_velocity_std",
        "init_gyro_bias_std",
        "init_accel_bias_std",
        "init_gravity_std",
    ),
    "extrinsic": ("extrinsic_rotvec", "extrinsic_translation"),
    "pipeline": ("scan_period", "min_range"),
}

_FIELD_NAMES = frozenset(f.name for f in fields(Config))


def _coerce(key: str, annotation: Any, value: Any) -> Any:
    """Check a raw value against the field annotation and normalize it."""
    kind = str(annotation)
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"Configuration key '{key}' must be a boolean, got {value!r}")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Configuration key '{key}' must be an integer, got {value!r}")
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"Configuration key '{key}' must be a string, got {value!r}")
        return value
    if kind == "float | None" and value is None:
        return None
    if kind.startswith("tuple"):
        if isinstance(value, str) or not hasattr(value, "__len__") or len(value) != 3:
            raise ConfigError(f"Configuration key '{key}' must be a list of 3 numbers, got {value!r}")
        return tuple(_as_float(key, v) for v in value)
    return _as_float(key, value)


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, int | float):
        raise ConfigError(f"Configuration key '{key}' must be a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError(f"Configuration key '{key}' must be finite, got {value!r}")
    return out


def load_config(path: str | os.PathLike[str]) -> Config:
    """Load a configuration from a TOML file.

    Keys that are not present take their defaults, so an empty file yields
    ``Config()``.

    Args:
        path: Path to the TOML file

    Returns:
        Validated configuration

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If the file is not valid TOML or a key is invalid
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Config file not found: {path}")

    with open(path, "rb") as f:
        try:
            data = tomli.load(f)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"Invalid TOML in {path}: {exc}") from exc

    return Config.from_mapping(data)


def write_config(config: Config, path: str | os.PathLike[str]) -> str:
    """Write a configuration to a TOML file readable by :func:`load_config`.

    Args:
        config: Configuration to save
        path: Destination file

    Returns:
        Path where the configuration was saved
    """
    # Create the directory if it doesn't exist
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    with open(path, "wb") as f:
        tomli_w.dump(config.to_mapping(), f)

    return os.fspath(path)
