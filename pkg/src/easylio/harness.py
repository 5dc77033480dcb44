"""Pipeline orchestration, run reports and ablation runners."""

from __future__ import annotations

import logging
import math
import os
import time
from collections.abc import Sequence
from dataclasses import dataclass, field, fields
from typing import Any, NamedTuple

import pandas as pd
import tomli_w

from easylio.adavox import CONTROL_COLUMNS, AdaptiveVoxelizer, ControlDiagnostics
from easylio.config import CONTROLLERS, SEARCHERS, Config
from easylio.estimator import ESTIMATOR_COLUMNS, integrate_scan, iterated_update
from easylio.evaluation import (
    ASSOCIATION_TOLERANCE,
    RTE_DELTA,
    EvaluationError,
    align_rigid,
    associate,
    ate,
    iae,
    overshoot,
    rte,
    summarize,
)
from easylio.io import SensorLog, TrajectoryRecord, write_trajectory
from easylio.preprocess import crop_blind, deskew, forward_propagate, initialize
from easylio.voxelmap import VoxelMap

logger = logging.getLogger(__name__)

__all__ = [
    "ASSOCIATION_TOLERANCE",
    "COMPONENT_VARIANTS",
    "RTE_DELTA",
    "AblationResult",
    "EstimatorDiagnostics",
    "EvaluationError",
    "RunReport",
    "ablate_components",
    "ablate_controllers",
    "ablate_search",
    "align_rigid",
    "associate",
    "ate",
    "iae",
    "overshoot",
    "rte",
    "run_pipeline",
    "summarize",
]

TIMING_COLUMNS = ("t", "ms")
COMPONENT_VARIANTS = ("full", "plane_only", "fixed_voxel", "neither")


@dataclass(frozen=True)
class EstimatorDiagnostics:
    """Per-frame estimator trace; frames without an update carry zero counts and NaN statistics."""

    t: float = math.nan
    iterations: int = 0
    n_plane: int = 0
    n_point: int = 0
    condition: float = math.nan
    n_accessed_mean: float = math.nan
    n_eval_mean: float = math.nan
    condition_plane: float = math.nan
    no_correspondences: int = 0

    def as_row(self) -> list[float]:
        """Values in ``ESTIMATOR_COLUMNS`` order."""
        return [getattr(self, f.name) for f in fields(self)]


@dataclass
class RunReport:
    """Everything one pipeline run produced.

    Attributes:
        trajectory: Estimated IMU pose at every processed scan end
        control: Controller trace per scan
        estimator: Estimator trace per scan
        timing: ``(t, ms)`` wall time of the per-scan pipeline body
        ground_truth: Reference trajectory of the log, if any
        scan_period: Nominal scan period (s)
        rejected: Number of scans whose update was rejected
        voxel_map: Final map (not part of the written report)
    """

    trajectory: list[TrajectoryRecord] = field(default_factory=list)
    control: list[ControlDiagnostics] = field(default_factory=list)
    estimator: list[EstimatorDiagnostics] = field(default_factory=list)
    timing: list[tuple[float, float]] = field(default_factory=list)
    ground_truth: list[TrajectoryRecord] | None = None
    scan_period: float = 0.1
    rejected: int = 0
    voxel_map: VoxelMap | None = None

    def __len__(self) -> int:
        """Return the number of processed scans."""
        return len(self.trajectory)

    def control_frame(self) -> pd.DataFrame:
        """Controller trace as a table with ``CONTROL_COLUMNS``."""
        return pd.DataFrame([d.as_row() for d in self.control], columns=list(CONTROL_COLUMNS))

    def estimator_frame(self) -> pd.DataFrame:
        """Estimator trace as a table with ``ESTIMATOR_COLUMNS``."""
        return pd.DataFrame([d.as_row() for d in self.estimator], columns=list(ESTIMATOR_COLUMNS))

    def timing_frame(self) -> pd.DataFrame:
        """Wall times as a table with ``TIMING_COLUMNS``."""
        return pd.DataFrame(self.timing, columns=list(TIMING_COLUMNS))

    @property
    def summary(self) -> dict[str, float | int]:
        """Summary statistics recomputed from the per-frame tables."""
        summary = summarize(
            self.trajectory,
            self.control_frame(),
            self.estimator_frame(),
            self.timing_frame(),
            self.ground_truth,
            self.scan_period,
        )
        summary["rejected"] = self.rejected
        return summary

    def write(self, directory: str | os.PathLike[str]) -> str:
        """Write the report files into a directory.

        Args:
            directory: Output directory, created if missing

        Returns:
            The directory path
        """
        directory = os.fspath(directory)

        # Create the directory if it doesn't exist
        os.makedirs(directory, exist_ok=True)

        write_trajectory(self.trajectory, os.path.join(directory, "trajectory.txt"))
        for name, frame in (
            ("control.csv", self.control_frame()),
            ("estimator.csv", self.estimator_frame()),
            ("timing.csv", self.timing_frame()),
        ):
            frame.to_csv(os.path.join(directory, name), index=False, float_format="%.17g", lineterminator="\n")
        with open(os.path.join(directory, "summary.toml"), "wb") as f:
            tomli_w.dump({"summary": self.summary}, f)
        logger.info("Wrote report for %d frames to %s", len(self), directory)
        return directory


def _estimator_diagnostics(t: float, result: Any) -> EstimatorDiagnostics:
    return EstimatorDiagnostics(
        t=t,
        iterations=result.iterations,
        n_plane=result.n_plane[-1] if result.n_plane else 0,
        n_point=result.n_point[-1] if result.n_point else 0,
        condition=result.condition,
        n_accessed_mean=result.n_accessed_mean,
        n_eval_mean=result.n_eval_mean,
        condition_plane=result.condition_plane,
        no_correspondences=int(result.no_correspondences),
    )


def run_pipeline(
    log: SensorLog,
    cfg: Config | None = None,
    *,
    estimate: bool = True,
    setpoints: Sequence[float | None] | None = None,
) -> RunReport:
    """Run the odometry pipeline over a log.

    Per scan: propagate through the IMU, crop the blind zone, deskew, run the
    voxel-size controller, update against the map with the coarse cloud, then
    insert the fine cloud at the posterior. The first scan only seeds the map.
    The initial state comes from the IMU samples before the first scan.

    Args:
        log: Sensor log
        cfg: Configuration (default: ``Config()``)
        estimate: If False, only dead-reckon and run the controller (no map)
        setpoints: Per-scan setpoint overrides, ``None`` entries keep the own setpoint

    Returns:
        The run report

    Raises:
        InitializationError: If too few samples precede the first scan
        DeskewError: If the IMU does not cover a scan
    """
    cfg = cfg or Config()
    report = RunReport(ground_truth=log.ground_truth, scan_period=cfg.scan_period)
    if not log.scans:
        logger.warning("Log has no scans; nothing to do")
        return report

    first_start = log.scans[0].t_start
    static = [s for s in log.imu if s.t < first_start]
    x, P = initialize(static, cfg)
    t_state = static[-1].t

    voxelizer = AdaptiveVoxelizer(cfg)
    vmap = VoxelMap.from_config(cfg) if estimate else None
    extrinsic = cfg.extrinsic

    for k, raw in enumerate(log.scans):
        started = time.perf_counter()
        imu = log.imu_between(t_state, raw.t_end)
        x, P, buffer = forward_propagate(x, P, imu, cfg, t_start=t_state, t_end=raw.t_end)
        t_state = raw.t_end

        scan = deskew(crop_blind(raw, cfg.min_range), buffer, extrinsic)
        override = setpoints[k] if setpoints is not None and k < len(setpoints) else None
        merge, update, control = voxelizer.process(scan.points, scan.t_end, override)

        diag = EstimatorDiagnostics(t=scan.t_end)
        if vmap is not None:
            if len(vmap) == 0:
                integrate_scan(merge.points, x, vmap, cfg, extrinsic)
            else:
                result = iterated_update(x, P, update.points, vmap, cfg, extrinsic)
                x, P = result.state, result.covariance
                diag = _estimator_diagnostics(scan.t_end, result)
                if result.rejected:
                    report.rejected += 1
                else:
                    integrate_scan(merge.points, x, vmap, cfg, extrinsic)
            if cfg.map_crop_radius is not None:
                vmap.crop(x.position, cfg.map_crop_radius)
        elapsed_ms = (time.perf_counter() - started) * 1e3

        report.trajectory.append(TrajectoryRecord.from_pose(scan.t_end, x.pose))
        report.control.append(control)
        report.estimator.append(diag)
        report.timing.append((scan.t_end, elapsed_ms))
        logger.debug(
            "Scan %d t=%.3f: d=%.3f Nt=%d iters=%d Npl=%d Npo=%d %.1f ms",
            k,
            scan.t_end,
            control.d,
            int(control.n_t) if math.isfinite(control.n_t) else 0,
            diag.iterations,
            diag.n_plane,
            diag.n_point,
            elapsed_ms,
        )

    report.voxel_map = vmap
    logger.info(
        "Processed %d scans (%d rejected), %d map voxels",
        len(report),
        report.rejected,
        len(vmap) if vmap is not None else 0,
    )
    return report


class AblationResult(NamedTuple):
    """Ablation table with the run behind each row."""

    table: pd.DataFrame
    reports: dict[str, RunReport]


def _row(label: str, name: str, report: RunReport, keys: Sequence[str]) -> dict[str, Any]:
    summary = report.summary
    return {label: name, **{k: summary[k] for k in keys}}


def ablate_controllers(
    log: SensorLog,
    cfg: Config | None = None,
    strategies: Sequence[str] | None = None,
    *,
    estimate: bool = True,
) -> AblationResult:
    """Compare voxel-size control strategies on one log.

    The setpoint stream of a ``pd_scheduled`` run is fed to every strategy, so
    only the control law varies.

    Args:
        log: Sensor log
        cfg: Base configuration (default: ``Config()``)
        strategies: Controllers to compare (default: all)
        estimate: Run the estimator too (needed for ATE)

    Returns:
        Table with IAE, overshoot, ATE and mean frame time per strategy

    Raises:
        ValueError: If a strategy name is unknown
    """
    cfg = cfg or Config()
    strategies = list(strategies or CONTROLLERS)
    for name in strategies:
        if name not in CONTROLLERS:
            raise ValueError(f"Unknown controller: {name}. Valid controllers are: " + ", ".join(CONTROLLERS))

    reference = run_pipeline(log, cfg.replace(controller="pd_scheduled"), estimate=estimate)
    stream: list[float | None] = [d.n_desired if math.isfinite(d.n_desired) else None for d in reference.control]

    reports = {}
    for name in strategies:
        if name == "pd_scheduled":
            reports[name] = reference
        else:
            reports[name] = run_pipeline(log, cfg.replace(controller=name), estimate=estimate, setpoints=stream)
    keys = ("iae", "overshoot", "ate", "time_mean_ms")
    table = pd.DataFrame([_row("strategy", name, reports[name], keys) for name in strategies])
    return AblationResult(table, reports)


def ablate_search(log: SensorLog, cfg: Config | None = None, searchers: Sequence[str] = SEARCHERS) -> AblationResult:
    """Compare correspondence searchers on one log.

    Returns:
        Table with mean frame time, mean evaluated and accessed counts and ATE per searcher
    """
    cfg = cfg or Config()
    reports = {name: run_pipeline(log, cfg.replace(searcher=name)) for name in searchers}
    keys = ("time_mean_ms", "n_eval_mean", "n_accessed_mean", "ate")
    table = pd.DataFrame([_row("searcher", name, reports[name], keys) for name in searchers])
    return AblationResult(table, reports)


def _component_config(cfg: Config, variant: str) -> Config:
    if variant == "full":
        return cfg
    if variant == "plane_only":
        return cfg.replace(hybrid_metric=False)
    if variant == "fixed_voxel":
        return cfg.replace(controller="fixed")
    if variant == "neither":
        return cfg.replace(hybrid_metric=False, controller="fixed")
    raise ValueError(f"Unknown variant: {variant}. Valid variants are: " + ", ".join(COMPONENT_VARIANTS))


def ablate_components(
    log: SensorLog,
    cfg: Config | None = None,
    variants: Sequence[str] = COMPONENT_VARIANTS,
) -> AblationResult:
    """Switch off adaptive voxelization and hybrid residuals, alone and together.

    Returns:
        Table with ATE, RTE, mean condition number and mean frame time per variant
    """
    cfg = cfg or Config()
    reports = {name: run_pipeline(log, _component_config(cfg, name)) for name in variants}
    keys = ("ate", "rte", "condition_mean", "time_mean_ms")
    table = pd.DataFrame([_row("variant", name, reports[name], keys) for name in variants])
    return AblationResult(table, reports)

