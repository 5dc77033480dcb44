"""Scale-aware adaptive voxelization.

A PD controller drives the voxel size so that the downsampled scan holds a
target number of points. The target grows with the scene scale, measured as a
moving average of per-scan median ranges, and the gains are interpolated
between configured bounds from the scale and the size of the tracking error.
Fixed-size and heuristic controllers are provided for comparison.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, fields, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from easylio.config import Config
from easylio.geometry import FloatArray

logger = logging.getLogger(__name__)

PD_CONTROLLERS = {
    "pd_scheduled": "scheduled",
    "pd_fixed_gains": "fixed",
    "pd_no_scale": "no_scale",
    "pd_no_error": "no_error",
}
BASELINE_CONTROLLERS = ("fixed", "linear_scaling", "threshold_switch", "volume_scaling", "pd_fixed_gains")

CONTROL_COLUMNS = (
    "t",
    "m",
    "mbar",
    "Ntemp",
    "Ndes",
    "e",
    "de",
    "phi",
    "psip",
    "psid",
    "Kp",
    "Kd",
    "d",
    "gammap",
    "gammad",
    "Nt",
    "Nmerge",
)


class EmptyScanError(ValueError):
    """Exception raised when a scale indicator is requested for an empty scan."""

    pass


@dataclass(frozen=True, eq=False)
class VoxelizedScan:
    """Downsampled points with one representative per occupied voxel.

    Attributes:
        points: ``(n, 3)`` representatives, in lexicographic voxel-key order
        voxel_size: Edge length of the voxels (m)
        source: Index of each representative in the input array
    """

    points: FloatArray
    voxel_size: float
    source: NDArray[np.int64] = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        """Return the number of points."""
        return len(self.points)


def voxel_keys(points: ArrayLike, d: float) -> NDArray[np.int64]:
    """Integer voxel index ``floor(p / d)`` per axis."""
    return np.floor(np.asarray(points, dtype=np.float64).reshape(-1, 3) / d).astype(np.int64)


def voxel_downsample(points: ArrayLike, d: float) -> VoxelizedScan:
    """Keep the point nearest each occupied voxel's center.

    Ties are broken by the lowest input index, so the result does not depend
    on how the input is iterated.

    Args:
        points: ``(n, 3)`` points
        d: Voxel edge length (m)

    Returns:
        Representatives ordered by voxel key

    Raises:
        ValueError: If ``d`` is not positive
    """
    if not d > 0:
        raise ValueError(f"Voxel size must be positive, got {d}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if n == 0:
        return VoxelizedScan(np.zeros((0, 3)), d)

    keys = voxel_keys(pts, d)
    dist2 = np.sum((pts - (keys + 0.5) * d) ** 2, axis=1)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    order = np.lexsort((np.arange(n), dist2, inverse))
    grouped = inverse[order]
    first = np.flatnonzero(np.concatenate([[True], grouped[1:] != grouped[:-1]]))
    chosen = order[first]
    return VoxelizedScan(pts[chosen], d, chosen.astype(np.int64))


def bi_resolution(points: ArrayLike, d: float) -> tuple[VoxelizedScan, VoxelizedScan]:
    """Voxelize at ``d/2`` for the map, then re-voxelize that result at ``d`` for the update.

    Returns:
        ``(V_merge, V)`` with ``len(V) <= len(V_merge)``
    """
    merge = voxel_downsample(points, 0.5 * d)
    update = voxel_downsample(merge.points, d)
    return merge, update


@dataclass
class VoxelizerState:
    """Mutable controller state advanced once per scan.

    Attributes:
        window: Recent median ranges (m), at most ``window_size`` long
        prev_error: Tracking error of the previous frame (points)
        voxel_size: Current voxel size (m)
        scan_period: Time between scans (s)
    """

    window: deque[float]
    prev_error: float
    voxel_size: float
    scan_period: float

    @classmethod
    def from_config(cls, cfg: Config) -> VoxelizerState:
        """Create the initial state."""
        return cls(deque(maxlen=cfg.window_size), 0.0, cfg.d_initial, cfg.scan_period)


@dataclass(frozen=True)
class Gains:
    """Scheduled PD gains and the normalized factors behind them."""

    kp: float
    kd: float
    phi: float
    psi_p: float
    psi_d: float
    gamma_p: float
    gamma_d: float


@dataclass(frozen=True)
class ControlDiagnostics:
    """Per-frame controller trace; unknown entries are NaN."""

    t: float = math.nan
    m: float = math.nan
    mbar: float = math.nan
    n_temp: float = math.nan
    n_desired: float = math.nan
    e: float = math.nan
    de: float = math.nan
    phi: float = math.nan
    psi_p: float = math.nan
    psi_d: float = math.nan
    kp: float = math.nan
    kd: float = math.nan
    d: float = math.nan
    gamma_p: float = math.nan
    gamma_d: float = math.nan
    n_t: float = math.nan
    n_merge: float = math.nan
    delta_d: float = math.nan

    def as_row(self) -> list[float]:
        """Values in ``CONTROL_COLUMNS`` order."""
        return [getattr(self, f.name) for f in fields(self)][: len(CONTROL_COLUMNS)]


def scale_indicator(v_temp: VoxelizedScan, state: VoxelizerState) -> tuple[float, float]:
    """Median range of the scan and its moving average over the window.

    The window is updated in place.

    Raises:
        EmptyScanError: If the scan has no points
    """
    if len(v_temp) == 0:
        raise EmptyScanError("Scale indicator is undefined for an empty scan")
    m = float(np.median(np.linalg.norm(v_temp.points, axis=1)))
    state.window.append(m)
    return m, float(np.mean(state.window))


def setpoint(mbar: float, cfg: Config) -> int:
    """Desired point count for scene scale ``mbar``.

    The count rises from ``n_min`` to ``n_max`` along the saturating power
    curve ``1 - (1 - mbar/tau_m)^p``, whose slope vanishes at ``tau_m``.
    """
    if mbar >= cfg.tau_m:
        return cfg.n_max
    rho = 1.0 - (1.0 - max(mbar, 0.0) / cfg.tau_m) ** cfg.setpoint_power
    return int(math.floor(cfg.n_min + (cfg.n_max - cfg.n_min) * rho + 0.5))


def schedule_gains(
    mbar: float,
    e: float,
    de: float,
    n_desired: float,
    cfg: Config,
    mode: str = "scheduled",
) -> Gains:
    """Interpolate the PD gains between their bounds.

    Each gain uses the geometric mean of the normalized scene scale ``phi`` and
    its normalized error magnitude ``psi``.

    Args:
        mbar: Scale indicator (m)
        e: Tracking error (points)
        de: Error rate (points/s)
        n_desired: Setpoint (points)
        cfg: Configuration with the gain bounds
        mode: ``scheduled``, ``fixed`` (bound midpoints), ``no_scale`` (``Gamma = psi``)
            or ``no_error`` (``Gamma = phi``)

    Returns:
        Gains and their factors
    """
    phi = min(mbar, cfg.tau_m) / cfg.tau_m
    p_cap = cfg.lambda_p * n_desired
    d_cap = cfg.lambda_d * n_desired / cfg.scan_period
    psi_p = min(abs(e), p_cap) / p_cap
    psi_d = min(abs(de), d_cap) / d_cap

    if mode == "scheduled":
        gamma_p, gamma_d = math.sqrt(phi * psi_p), math.sqrt(phi * psi_d)
    elif mode == "fixed":
        gamma_p = gamma_d = 0.5
    elif mode == "no_scale":
        gamma_p, gamma_d = psi_p, psi_d
    elif mode == "no_error":
        gamma_p = gamma_d = phi
    else:
        raise ValueError(f"Unknown gain mode: {mode}. Valid modes are: scheduled, fixed, no_scale, no_error")

    return Gains(
        kp=cfg.kp_min + (cfg.kp_max - cfg.kp_min) * gamma_p,
        kd=cfg.kd_min + (cfg.kd_max - cfg.kd_min) * gamma_d,
        phi=phi,
        psi_p=psi_p,
        psi_d=psi_d,
        gamma_p=gamma_p,
        gamma_d=gamma_d,
    )


def control_step(
    state: VoxelizerState,
    n_temp: float,
    n_desired: float,
    kp: float,
    kd: float,
    cfg: Config,
) -> tuple[float, float, ControlDiagnostics]:
    """Apply one PD update to the voxel size.

    A positive error (too few points) shrinks the voxels. The state's error
    and voxel size are updated in place.

    Returns:
        New voxel size, tracking error and a partial diagnostics record
    """
    e = float(n_desired - n_temp)
    de = (e - state.prev_error) / state.scan_period
    delta = -kp * e - kd * de
    d = min(max(state.voxel_size + delta, cfg.d_min), cfg.d_max)
    state.prev_error = e
    state.voxel_size = d
    diag = ControlDiagnostics(
        n_temp=float(n_temp), n_desired=float(n_desired), e=e, de=de, kp=kp, kd=kd, d=d, delta_d=delta
    )
    return d, e, diag


def baseline_controller(
    kind: str,
    points: ArrayLike,
    state: VoxelizerState,
    n_temp: float,
    n_desired: float,
    cfg: Config,
) -> float:
    """Voxel size chosen by a comparison strategy.

    Args:
        kind: One of ``BASELINE_CONTROLLERS``
        points: The scan being voxelized
        state: Controller state, updated in place
        n_temp: Point count at the current voxel size
        n_desired: Target point count
        cfg: Configuration

    Returns:
        The new voxel size

    Raises:
        ValueError: If ``kind`` is unknown
    """
    if kind == "fixed":
        d = cfg.d_initial
    elif kind == "linear_scaling":
        d = state.voxel_size * n_temp / n_desired
    elif kind == "threshold_switch":
        coarse = len(voxel_downsample(points, cfg.d_coarse))
        d = cfg.d_fine if coarse < cfg.tau_n else cfg.d_coarse
    elif kind == "volume_scaling":
        count = len(voxel_downsample(points, cfg.d_temp))
        d = cfg.d_temp * (count / n_desired) ** (1.0 / 3.0)
    elif kind == "pd_fixed_gains":
        e = n_desired - n_temp
        de = (e - state.prev_error) / state.scan_period
        gains = schedule_gains(0.0, e, de, n_desired, cfg, mode="fixed")
        d, _, _ = control_step(state, n_temp, n_desired, gains.kp, gains.kd, cfg)
        return d
    else:
        raise ValueError(
            f"Unknown baseline controller: {kind}. Valid controllers are: " + ", ".join(BASELINE_CONTROLLERS)
        )

    if kind in ("linear_scaling", "volume_scaling"):
        d = min(max(d, cfg.d_min), cfg.d_max)
    state.prev_error = float(n_desired - n_temp)
    state.voxel_size = d
    return d


class AdaptiveVoxelizer:
    """Per-scan voxel-size control loop.

    Args:
        cfg: Configuration
        controller: Strategy name (default: ``cfg.controller``)
    """

    def __init__(self, cfg: Config, controller: str | None = None) -> None:
        """Initialize the controller state."""
        self.cfg = cfg
        self.controller = controller or cfg.controller
        if self.controller not in PD_CONTROLLERS and self.controller not in BASELINE_CONTROLLERS:
            raise ValueError(
                f"Unknown controller: {self.controller}. Valid controllers are: "
                + ", ".join([*PD_CONTROLLERS, *BASELINE_CONTROLLERS[:-1]])
            )
        self.state = VoxelizerState.from_config(cfg)

    @property
    def voxel_size(self) -> float:
        """Voxel size that the next scan will be voxelized with."""
        return self.state.voxel_size

    def _target(self, mbar: float, override: float | None) -> float:
        if override is not None:
            return float(override)
        if self.controller in ("linear_scaling", "volume_scaling"):
            return float(self.cfg.n_desired_fixed)
        return float(setpoint(mbar, self.cfg))

    def process(
        self,
        points: ArrayLike,
        t: float = math.nan,
        setpoint_override: float | None = None,
    ) -> tuple[VoxelizedScan, VoxelizedScan, ControlDiagnostics]:
        """Run one frame of the control loop.

        An empty scan leaves the state untouched and yields empty outputs.

        Args:
            points: Deskewed scan points
            t: Frame timestamp recorded in the diagnostics
            setpoint_override: Target count replacing the scale-informed setpoint

        Returns:
            ``(V_merge, V, diagnostics)``
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        d_prev = self.state.voxel_size
        v_temp = voxel_downsample(pts, d_prev)
        try:
            m, mbar = scale_indicator(v_temp, self.state)
        except EmptyScanError:
            logger.warning("Empty scan at t=%s; keeping voxel size %.4f", t, d_prev)
            empty = VoxelizedScan(np.zeros((0, 3)), d_prev)
            return empty, empty, ControlDiagnostics(t=t, n_temp=0.0, d=d_prev, n_t=0.0, n_merge=0.0)

        n_temp = float(len(v_temp))
        n_des = self._target(mbar, setpoint_override)

        if self.controller in PD_CONTROLLERS:
            e = n_des - n_temp
            de = (e - self.state.prev_error) / self.state.scan_period
            gains = schedule_gains(mbar, e, de, n_des, self.cfg, mode=PD_CONTROLLERS[self.controller])
            d, _, diag = control_step(self.state, n_temp, n_des, gains.kp, gains.kd, self.cfg)
            diag = replace(
                diag,
                phi=gains.phi,
                psi_p=gains.psi_p,
                psi_d=gains.psi_d,
                gamma_p=gains.gamma_p,
                gamma_d=gains.gamma_d,
            )
        else:
            prev_error = self.state.prev_error
            d = baseline_controller(self.controller, pts, self.state, n_temp, n_des, self.cfg)
            e = n_des - n_temp
            diag = ControlDiagnostics(
                n_temp=n_temp,
                n_desired=n_des,
                e=e,
                de=(e - prev_error) / self.state.scan_period,
                d=d,
                delta_d=d - d_prev,
            )

        merge, update = bi_resolution(pts, d)
        diag = replace(diag, t=t, m=m, mbar=mbar, n_t=float(len(update)), n_merge=float(len(merge)))
        logger.debug(
            "t=%s mbar=%.2f Ntemp=%d Ndes=%d d=%.4f Nt=%d", t, mbar, int(n_temp), int(n_des), d, len(update)
        )
        return merge, update, diag
