"""EasyLIO - LiDAR-inertial odometry with adaptive voxelization."""

from easylio.adavox import AdaptiveVoxelizer, ControlDiagnostics, voxel_downsample
from easylio.config import Config, ConfigError, load_config, write_config
from easylio.estimator import UpdateResult, integrate_scan, iterated_update
from easylio.evaluation import EvaluationError, ate, iae, overshoot, rte
from easylio.geometry import NavState, RigidTransform, boxminus, boxplus
from easylio.harness import RunReport, ablate_components, ablate_controllers, ablate_search, run_pipeline
from easylio.io import ImuSample, LidarScan, SensorLog, TrajectoryRecord, load_log, write_log
from easylio.preprocess import deskew, forward_propagate, initialize
from easylio.synth import generate_log, scenario
from easylio.voxelmap import VoxelMap

__version__ = "0.3.0"

__all__ = [
    "AdaptiveVoxelizer",
    "Config",
    "ConfigError",
    "ControlDiagnostics",
    "EvaluationError",
    "ImuSample",
    "LidarScan",
    "NavState",
    "RigidTransform",
    "RunReport",
    "SensorLog",
    "TrajectoryRecord",
    "UpdateResult",
    "VoxelMap",
    "ablate_components",
    "ablate_controllers",
    "ablate_search",
    "ate",
    "boxminus",
    "boxplus",
    "deskew",
    "forward_propagate",
    "generate_log",
    "iae",
    "initialize",
    "integrate_scan",
    "iterated_update",
    "load_config",
    "load_log",
    "overshoot",
    "rte",
    "run_pipeline",
    "scenario",
    "voxel_downsample",
    "write_config",
    "write_log",
]
