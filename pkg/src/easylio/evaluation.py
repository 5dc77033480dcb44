"""Trajectory and controller metrics."""

from __future__ import annotations

import logging
import math
import warnings
from collections.abc import Iterable, Sequence
from typing import Any

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from easylio.adavox import ControlDiagnostics
from easylio.geometry import FloatArray, RigidTransform
from easylio.io import TrajectoryRecord

logger = logging.getLogger(__name__)

ASSOCIATION_TOLERANCE = 0.01
RTE_DELTA = 10.0


class EvaluationError(ValueError):
    """Exception raised when a metric cannot be computed from its inputs."""

    pass


def associate(
    est: Sequence[TrajectoryRecord],
    gt: Sequence[TrajectoryRecord],
    max_difference: float = ASSOCIATION_TOLERANCE,
) -> list[tuple[int, int]]:
    """Pair estimated and reference poses by nearest timestamp.

    Closest pairs are taken first and every pose is used at most once.

    Args:
        est: Estimated trajectory
        gt: Reference trajectory, sorted by time
        max_difference: Largest accepted time difference (s)

    Returns:
        ``(est_index, gt_index)`` pairs sorted by estimate time
    """
    if not est or not gt:
        return []
    t_est = np.array([r.t for r in est])
    t_gt = np.array([r.t for r in gt])
    right = np.clip(np.searchsorted(t_gt, t_est), 0, len(t_gt) - 1)
    left = np.clip(right - 1, 0, len(t_gt) - 1)
    nearest = np.where(np.abs(t_gt[left] - t_est) <= np.abs(t_gt[right] - t_est), left, right)
    diff = np.abs(t_gt[nearest] - t_est)

    matches = []
    used: set[int] = set()
    for i in np.lexsort((np.arange(len(t_est)), diff)):
        j = int(nearest[i])
        if diff[i] <= max_difference and j not in used:
            used.add(j)
            matches.append((int(i), j))
    matches.sort()
    return matches


def align_rigid(source: Any, target: Any) -> RigidTransform:
    """Closed-form rigid alignment (rotation and translation, no scale).

    Args:
        source: ``(n, 3)`` points to move
        target: ``(n, 3)`` points to match

    Returns:
        Transform ``T`` minimizing ``sum |T(source) - target|^2``
    """
    src = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    mu_src, mu_dst = src.mean(axis=0), dst.mean(axis=0)
    src_c, dst_c = src - mu_src, dst - mu_dst
    if np.allclose(src_c, 0.0) or np.allclose(dst_c, 0.0):
        rotation = np.eye(3)
    else:
        with warnings.catch_warnings():
            # Collinear trajectories leave the rotation about their line undetermined
            warnings.simplefilter("ignore", UserWarning)
            rotation = Rotation.align_vectors(dst_c, src_c)[0].as_matrix()
    return RigidTransform(rotation, mu_dst - rotation @ mu_src)


def _positions(records: Sequence[TrajectoryRecord], index: Iterable[int]) -> FloatArray:
    return np.array([records[i].position for i in index], dtype=np.float64).reshape(-1, 3)


def _matched(
    est: Sequence[TrajectoryRecord], gt: Sequence[TrajectoryRecord], tolerance: float
) -> tuple[list[int], list[int]]:
    pairs = associate(est, gt, tolerance)
    if len(pairs) < 2:
        raise EvaluationError(f"Need at least 2 associated poses, got {len(pairs)}")
    return [i for i, _ in pairs], [j for _, j in pairs]


def ate(
    est: Sequence[TrajectoryRecord],
    gt: Sequence[TrajectoryRecord],
    tolerance: float = ASSOCIATION_TOLERANCE,
) -> float:
    """Absolute translational error.

    Args:
        est: Estimated trajectory
        gt: Reference trajectory
        tolerance: Timestamp association tolerance (s)

    Returns:
        RMSE of position residuals after rigid alignment (m)

    Raises:
        EvaluationError: If fewer than 2 poses associate
    """
    ie, ig = _matched(est, gt, tolerance)
    p_est, p_gt = _positions(est, ie), _positions(gt, ig)
    aligned = align_rigid(p_est, p_gt).apply(p_est)
    return float(np.sqrt(np.mean(np.sum((aligned - p_gt) ** 2, axis=1))))


def rte(
    est: Sequence[TrajectoryRecord],
    gt: Sequence[TrajectoryRecord],
    delta: float = RTE_DELTA,
    tolerance: float = ASSOCIATION_TOLERANCE,
) -> float:
    """Relative translational error over segments of ``delta`` meters.

    Each associated pose starts a segment ending at the first pose at least
    ``delta`` meters further along the reference path.

    Args:
        est: Estimated trajectory
        gt: Reference trajectory
        delta: Segment length (m)
        tolerance: Timestamp association tolerance (s)

    Returns:
        RMSE of relative translation errors (m)

    Raises:
        EvaluationError: If fewer than 2 poses associate or no segment fits
    """
    ie, ig = _matched(est, gt, tolerance)
    p_est, p_gt = _positions(est, ie), _positions(gt, ig)
    r_est = Rotation.from_quat([est[i].quaternion for i in ie]).as_matrix()
    r_gt = Rotation.from_quat([gt[j].quaternion for j in ig]).as_matrix()

    travelled = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(p_gt, axis=0), axis=1))])
    end = np.searchsorted(travelled, travelled + delta, side="left")
    start = np.flatnonzero(end < len(travelled))
    if len(start) == 0:
        raise EvaluationError(f"Trajectory of {travelled[-1]:.3f} m is shorter than the {delta} m segment")
    end = end[start]

    rel_est = np.einsum("nji,nj->ni", r_est[start], p_est[end] - p_est[start])
    rel_gt = np.einsum("nji,nj->ni", r_gt[start], p_gt[end] - p_gt[start])
    return float(np.sqrt(np.mean(np.sum((rel_est - rel_gt) ** 2, axis=1))))


def _tracking(stream: Iterable[ControlDiagnostics] | pd.DataFrame) -> tuple[FloatArray, FloatArray]:
    """Counts and setpoints of the frames where both are known."""
    if isinstance(stream, pd.DataFrame):
        n_t, n_des = stream["Nt"].to_numpy(dtype=np.float64), stream["Ndes"].to_numpy(dtype=np.float64)
    else:
        rows = list(stream)
        n_t = np.array([d.n_t for d in rows], dtype=np.float64)
        n_des = np.array([d.n_desired for d in rows], dtype=np.float64)
    known = np.isfinite(n_t) & np.isfinite(n_des)
    if not known.any():
        raise EvaluationError("No frame with both a point count and a setpoint")
    return n_t[known], n_des[known]


def iae(stream: Iterable[ControlDiagnostics] | pd.DataFrame, scan_period: float = 0.1) -> float:
    """Integral of absolute setpoint error, ``sum |N_t - N_desired| * scan_period``."""
    n_t, n_des = _tracking(stream)
    return float(np.sum(np.abs(n_t - n_des)) * scan_period)


def overshoot(stream: Iterable[ControlDiagnostics] | pd.DataFrame) -> float:
    """Largest relative exceedance of the setpoint, floored at 0."""
    n_t, n_des = _tracking(stream)
    return max(float(np.max((n_t - n_des) / n_des)), 0.0)


def _column(frame: pd.DataFrame, column: str) -> np.ndarray:
    if column not in frame or frame.empty:
        return np.zeros(0)
    values = frame[column].to_numpy(dtype=np.float64)
    # NaN marks frames without an update
    return values[~np.isnan(values)]


def _mean(frame: pd.DataFrame, column: str) -> float:
    """Mean over updated frames; a single singular frame makes it infinite."""
    values = _column(frame, column)
    return float(values.mean()) if len(values) else math.nan


def _singular(frame: pd.DataFrame, column: str) -> int:
    return int(np.count_nonzero(np.isinf(_column(frame, column))))


def summarize(
    trajectory: Sequence[TrajectoryRecord],
    control: pd.DataFrame,
    estimator: pd.DataFrame,
    timing: pd.DataFrame,
    ground_truth: Sequence[TrajectoryRecord] | None = None,
    scan_period: float = 0.1,
    rte_delta: float = RTE_DELTA,
) -> dict[str, float | int]:
    """Summary statistics of a run, computed only from its per-frame tables.

    Metrics that cannot be computed (no ground truth, short runs, no frames)
    are NaN.

    Args:
        trajectory: Estimated poses
        control: Controller table with ``CONTROL_COLUMNS``
        estimator: Estimator table with ``ESTIMATOR_COLUMNS``
        timing: Table with a ``ms`` column
        ground_truth: Reference trajectory
        scan_period: Frame period used for IAE (s)
        rte_delta: RTE segment length (m)

    Returns:
        Mapping of metric name to value
    """
    summary: dict[str, float | int] = {"frames": len(trajectory)}
    summary["ate"] = math.nan
    summary["rte"] = math.nan
    if ground_truth:
        try:
            summary["ate"] = ate(trajectory, ground_truth)
        except EvaluationError as exc:
            logger.info("ATE unavailable: %s", exc)
        try:
            summary["rte"] = rte(trajectory, ground_truth, rte_delta)
        except EvaluationError as exc:
            logger.info("RTE unavailable: %s", exc)

    ms = timing["ms"].to_numpy(dtype=np.float64) if "ms" in timing else np.zeros(0)
    summary["time_mean_ms"] = float(ms.mean()) if len(ms) else math.nan
    summary["time_p95_ms"] = float(np.percentile(ms, 95)) if len(ms) else math.nan

    try:
        summary["iae"] = iae(control, scan_period)
        summary["overshoot"] = overshoot(control)
    except (EvaluationError, KeyError):
        summary["iae"] = math.nan
        summary["overshoot"] = math.nan

    summary["condition_mean"] = _mean(estimator, "cond")
    summary["condition_plane_mean"] = _mean(estimator, "cond_plane")
    summary["condition_singular"] = _singular(estimator, "cond")
    summary["condition_plane_singular"] = _singular(estimator, "cond_plane")
    summary["no_correspondence_frames"] = int(estimator["no_corr"].sum()) if "no_corr" in estimator else 0
    summary["n_accessed_mean"] = _mean(estimator, "Naccessed_mean")
    summary["n_eval_mean"] = _mean(estimator, "Neval_mean")
    return summary
