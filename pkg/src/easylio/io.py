"""Sensor-log ingestion and trajectory output.

On-disk layout of a log directory::

    imu.csv           t,wx,wy,wz,ax,ay,az
    scans/<t>.csv     offset,x,y,z   (one file per scan, <t> = repr of the scan end time)
    gt.txt            optional ground truth, trajectory format
    log.toml          optional generator metadata

Trajectory files hold one ``t tx ty tz qx qy qz qw`` line per pose.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from typing import Any, NamedTuple

import numpy as np
import pandas as pd
import tomli
import tomli_w

from easylio.config import Config, ConfigError, load_config, write_config
from easylio.geometry import FloatArray, RigidTransform, quaternion_to_rotation, rotation_to_quaternion

logger = logging.getLogger(__name__)

IMU_COLUMNS = ("t", "wx", "wy", "wz", "ax", "ay", "az")
SCAN_COLUMNS = ("offset", "x", "y", "z")
TRAJECTORY_COLUMNS = ("t", "tx", "ty", "tz", "qx", "qy", "qz", "qw")

# Full round-trip precision for CSV floats
_CSV_FLOAT_FORMAT = "%.17g"

__all__ = [
    "Config",
    "ConfigError",
    "ImuSample",
    "LidarScan",
    "LogFormatError",
    "SensorLog",
    "TrajectoryRecord",
    "format_trajectory_line",
    "load_config",
    "load_log",
    "read_metadata",
    "read_trajectory",
    "write_config",
    "write_log",
    "write_trajectory",
]


class LogFormatError(ValueError):
    """Exception raised when a log file is malformed or inconsistent."""

    pass


class ImuSample(NamedTuple):
    """One inertial measurement.

    Attributes:
        t: Timestamp in seconds
        gyro: Angular velocity (rad/s)
        accel: Specific force (m/s^2)
    """

    t: float
    gyro: FloatArray
    accel: FloatArray


@dataclass(frozen=True, eq=False)
class LidarScan:
    """One LiDAR sweep with per-point time offsets.

    Attributes:
        t_end: Time of the last beam (s)
        offsets: Per-point time offsets relative to ``t_end``, all <= 0 (s)
        points: ``(n, 3)`` points in the LiDAR frame (m)
    """

    t_end: float
    offsets: FloatArray = field(default_factory=lambda: np.zeros(0))
    points: FloatArray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self) -> None:
        """Normalize array shapes."""
        object.__setattr__(self, "t_end", float(self.t_end))
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))
        if len(self.offsets) != len(self.points):
            raise ValueError(f"Scan at t={self.t_end!r} has {len(self.offsets)} offsets for {len(self.points)} points")

    def __len__(self) -> int:
        """Return the number of points."""
        return len(self.points)

    @property
    def t_start(self) -> float:
        """Timestamp of the earliest point (``t_end`` for an empty scan)."""
        return self.t_end + float(self.offsets.min()) if len(self.offsets) else self.t_end

    def subset(self, mask: Any) -> LidarScan:
        """Return a scan with only the selected points."""
        return LidarScan(self.t_end, self.offsets[mask], self.points[mask])


class TrajectoryRecord(NamedTuple):
    """Timestamped pose.

    Attributes:
        t: Timestamp (s)
        position: Position (m)
        quaternion: Unit quaternion ``(x, y, z, w)``
    """

    t: float
    position: FloatArray
    quaternion: FloatArray

    @classmethod
    def from_pose(cls, t: float, pose: RigidTransform) -> TrajectoryRecord:
        """Build a record from a rigid transform."""
        return cls(float(t), np.array(pose.translation), rotation_to_quaternion(pose.rotation))

    @property
    def pose(self) -> RigidTransform:
        """The record as a rigid transform."""
        return RigidTransform(quaternion_to_rotation(self.quaternion), self.position)


class SensorLog(NamedTuple):
    """Time-ordered sensor streams of one recording.

    Attributes:
        imu: IMU samples sorted by time
        scans: Scans sorted by end time
        ground_truth: Optional reference trajectory
    """

    imu: list[ImuSample]
    scans: list[LidarScan]
    ground_truth: list[TrajectoryRecord] | None = None

    def imu_between(self, t0: float, t1: float) -> list[ImuSample]:
        """Return the samples needed to integrate from ``t0`` to ``t1``.

        This is every sample with ``t0 <= t <= t1`` plus the last sample
        before ``t0``, whose reading holds at ``t0``.
        """
        times = np.fromiter((s.t for s in self.imu), dtype=np.float64, count=len(self.imu))
        lo = max(int(np.searchsorted(times, t0, side="left")) - 1, 0)
        hi = int(np.searchsorted(times, t1, side="right"))
        return self.imu[lo:hi]


def _read_table(
    path: str,
    columns: Sequence[str],
    *,
    header: bool = True,
) -> FloatArray:
    """Parse a numeric table, reporting the first bad cell by file, line and column.

    Args:
        path: File to read
        columns: Expected column names
        header: Whether the first line is a header naming ``columns``

    Returns:
        ``(n, len(columns))`` float array

    Raises:
        LogFormatError: If the header, a row or a value is malformed
    """
    first_data_line = 2 if header else 1
    try:
        if header:
            frame = pd.read_csv(path, index_col=False, float_precision="round_trip", skipinitialspace=True)
        else:
            frame = pd.read_csv(
                path, sep=r"\s+", header=None, names=list(columns), index_col=False, float_precision="round_trip"
            )
    except pd.errors.EmptyDataError:
        if header:
            raise LogFormatError(f"{path}:1: missing header, expected '{','.join(columns)}'") from None
        return np.zeros((0, len(columns)))
    except pd.errors.ParserError as exc:
        raise LogFormatError(f"{path}: malformed row: {exc}") from exc

    if header and tuple(str(c) for c in frame.columns) != tuple(columns):
        raise LogFormatError(
            f"{path}:1: unexpected header '{','.join(str(c) for c in frame.columns)}', expected '{','.join(columns)}'"
        )
    if frame.empty:
        return np.zeros((0, len(columns)))

    numeric = frame.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    # Columns that parsed cleanly keep the round-trip values
    for j, name in enumerate(columns):
        if pd.api.types.is_float_dtype(frame[name]) or pd.api.types.is_integer_dtype(frame[name]):
            numeric[:, j] = frame[name].to_numpy(dtype=np.float64)

    bad = ~np.isfinite(numeric)
    if bad.any():
        row, col = (int(i) for i in np.argwhere(bad)[0])
        raw = frame.iat[row, col]
        raise LogFormatError(f"{path}:{row + first_data_line}: column '{columns[col]}': invalid value {raw!r}")
    return numeric


def _read_imu(path: str) -> list[ImuSample]:
    table = _read_table(path, IMU_COLUMNS)
    steps = np.diff(table[:, 0])
    if (steps <= 0).any():
        row = int(np.argmax(steps <= 0)) + 1
        raise LogFormatError(
            f"{path}:{row + 2}: column 't': timestamps must be strictly increasing "
            f"({table[row - 1, 0]!r} -> {table[row, 0]!r})"
        )
    return [ImuSample(float(r[0]), r[1:4].copy(), r[4:7].copy()) for r in table]


def _read_scan(path: str, t_end: float) -> LidarScan:
    table = _read_table(path, SCAN_COLUMNS)
    positive = table[:, 0] > 0
    if positive.any():
        row = int(np.argmax(positive))
        raise LogFormatError(f"{path}:{row + 2}: column 'offset': offsets must be <= 0, got {table[row, 0]!r}")
    return LidarScan(t_end, table[:, 0], table[:, 1:4])


def read_trajectory(path: str | os.PathLike[str]) -> list[TrajectoryRecord]:
    """Read a trajectory file.

    Args:
        path: File with ``t tx ty tz qx qy qz qw`` lines

    Returns:
        Records in file order, quaternions normalized

    Raises:
        FileNotFoundError: If the file does not exist
        LogFormatError: If a line is malformed
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Trajectory file not found: {path}")
    table = _read_table(path, TRAJECTORY_COLUMNS, header=False)
    records = []
    for line, row in enumerate(table, start=1):
        q = row[4:8]
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise LogFormatError(f"{path}:{line}: column 'qw': zero quaternion")
        records.append(TrajectoryRecord(float(row[0]), row[1:4].copy(), q / norm))
    return records


def format_trajectory_line(record: TrajectoryRecord) -> str:
    """Format one pose as ``t tx ty tz qx qy qz qw``.

    The timestamp carries 8 decimals, every other field 9 significant digits.
    The quaternion is normalized with ``qw >= 0``.
    """
    q = np.asarray(record.quaternion, dtype=np.float64)
    q = q / np.linalg.norm(q)
    if q[3] < 0:
        q = -q
    # Adding 0.0 turns -0.0 into 0.0
    values = [float(v) + 0.0 for v in (*record.position, *q)]
    return f"{record.t:.8f} " + " ".join(f"{v:.9g}" for v in values) + "\n"


def write_trajectory(records: Iterable[TrajectoryRecord], path: str | os.PathLike[str]) -> None:
    """Write records in the trajectory text format.

    Args:
        records: Time-sorted poses
        path: Destination file

    Raises:
        ValueError: If the records are not sorted by time
    """
    records = list(records)
    for prev, cur in zip(records, records[1:], strict=False):
        if cur.t < prev.t:
            raise ValueError(f"Trajectory records must be time-sorted ({prev.t!r} -> {cur.t!r})")
    with open(path, "w", newline="\n") as f:
        f.writelines(format_trajectory_line(r) for r in records)


def load_log(path: str | os.PathLike[str]) -> SensorLog:
    """Load a sensor log directory.

    Args:
        path: Directory containing ``imu.csv``, ``scans/`` and optionally ``gt.txt``

    Returns:
        The log, streams sorted by time

    Raises:
        FileNotFoundError: If the directory or ``imu.csv`` is missing
        LogFormatError: If a file is malformed or a scan is not covered by IMU data
    """
    path = os.fspath(path)
    if not os.path.isdir(path):
        raise FileNotFoundError(f"Log directory not found: {path}")

    imu_path = os.path.join(path, "imu.csv")
    if not os.path.exists(imu_path):
        raise FileNotFoundError(f"IMU file not found: {imu_path}")
    imu = _read_imu(imu_path)

    scans: list[LidarScan] = []
    scan_dir = os.path.join(path, "scans")
    if os.path.isdir(scan_dir):
        for name in os.listdir(scan_dir):
            stem, ext = os.path.splitext(name)
            if ext != ".csv":
                continue
            try:
                t_end = float(stem)
            except ValueError:
                raise LogFormatError(f"{os.path.join(scan_dir, name)}: file name is not a scan end time") from None
            scans.append(_read_scan(os.path.join(scan_dir, name), t_end))
    scans.sort(key=lambda s: s.t_end)

    for scan in scans:
        if not imu or imu[0].t > scan.t_start or imu[-1].t < scan.t_end:
            raise LogFormatError(
                f"Scan at t={scan.t_end!r} is not covered by IMU data over [{scan.t_start!r}, {scan.t_end!r}]"
            )

    gt_path = os.path.join(path, "gt.txt")
    ground_truth = read_trajectory(gt_path) if os.path.exists(gt_path) else None

    logger.info("Loaded %s: %d IMU samples, %d scans", path, len(imu), len(scans))
    return SensorLog(imu, scans, ground_truth)


def write_log(log: SensorLog, directory: str | os.PathLike[str], metadata: dict[str, Any] | None = None) -> str:
    """Write a sensor log in the format read by :func:`load_log`.

    IMU and scan values are written with 17 significant digits, so they load
    back bit-exactly.

    Args:
        log: Log to write
        directory: Destination directory, created if needed
        metadata: Optional table saved as ``log.toml``

    Returns:
        The directory path
    """
    directory = os.fspath(directory)
    scan_dir = os.path.join(directory, "scans")
    os.makedirs(scan_dir, exist_ok=True)

    imu_table = np.array([[s.t, *s.gyro, *s.accel] for s in log.imu], dtype=np.float64).reshape(-1, 7)
    pd.DataFrame(imu_table, columns=list(IMU_COLUMNS)).to_csv(
        os.path.join(directory, "imu.csv"), index=False, float_format=_CSV_FLOAT_FORMAT, lineterminator="\n"
    )

    for scan in log.scans:
        table = np.column_stack([scan.offsets, scan.points]) if len(scan) else np.zeros((0, 4))
        pd.DataFrame(table, columns=list(SCAN_COLUMNS)).to_csv(
            os.path.join(scan_dir, f"{scan.t_end!r}.csv"),
            index=False,
            float_format=_CSV_FLOAT_FORMAT,
            lineterminator="\n",
        )

    if log.ground_truth is not None:
        write_trajectory(log.ground_truth, os.path.join(directory, "gt.txt"))

    if metadata is not None:
        with open(os.path.join(directory, "log.toml"), "wb") as f:
            tomli_w.dump(metadata, f)

    return directory


def read_metadata(directory: str | os.PathLike[str]) -> dict[str, Any]:
    """Return the ``log.toml`` table of a log directory, or an empty dict."""
    path = os.path.join(directory, "log.toml")
    if not os.path.exists(path):
        return {}
    with open(path, "rb") as f:
        return tomli.load(f)
