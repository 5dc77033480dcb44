"""Hybrid point-to-plane / point-to-point iterated error-state Kalman update.

Measurement rows only touch the pose blocks of the error state, ordered
``(dt, dr)`` in columns ``0:6``. Plane rows are stacked before point rows.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike

from easylio.config import Config
from easylio.geometry import (
    POS,
    ROT,
    STATE_DIM,
    FloatArray,
    NavState,
    RigidTransform,
    boxminus,
    boxplus,
    right_jacobian_inv,
    skew,
    so3_log,
)
from easylio.voxelmap import Correspondence, CorrespondenceSet, SearchStats, VoxelMap, point_covariances

logger = logging.getLogger(__name__)

ESTIMATOR_COLUMNS = ("t", "iters", "Npl", "Npo", "cond", "Naccessed_mean", "Neval_mean", "cond_plane", "no_corr")

# Smallest variance of a measurement row (m^2)
R_FLOOR = 1e-12
# Shortest point residual with a defined direction (m)
EPS_DIRECTION = 1e-6
# Smallest pose-information eigenvalue treated as nonzero
_CONDITION_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class PlaneTerm:
    """Linearized point-to-plane measurement.

    Attributes:
        z: Signed distance to the plane (m)
        h: 18-wide Jacobian row; only the pose columns are nonzero
        r: Residual variance (m^2)
    """

    z: float
    h: FloatArray
    r: float


@dataclass(frozen=True, eq=False)
class PointTerm:
    """Linearized point-to-point measurement on the residual norm.

    Attributes:
        z: Distance to the matched point (m)
        h: 18-wide Jacobian row
        r: Combined variance ``lambda_po * (R_norm + R_disc)`` (m^2)
        r_disc: Discretization variance (m^2)
        stats: Search counters that produced the match
    """

    z: float
    h: FloatArray
    r: float
    r_disc: float
    stats: SearchStats


@dataclass
class UpdateResult:
    """Outcome of one iterated update.

    Attributes:
        state: Posterior state
        covariance: Posterior covariance
        iterations: Iterations run
        n_plane: Plane matches per iteration
        n_point: Point matches per iteration
        condition: Pose-block condition number of all rows of the last iteration
        condition_plane: Same with plane rows only
        n_accessed_mean: Mean voxels accessed per point match (last iteration)
        n_eval_mean: Mean points evaluated per point match (last iteration)
        converged: Whether the step fell below ``tau_converge``
        rejected: Whether the scan was rejected and the prior returned
        no_correspondences: Whether an iteration found nothing to match; with
            zero iterations the prior was returned unchanged
    """

    state: NavState
    covariance: FloatArray
    iterations: int = 0
    n_plane: list[int] = field(default_factory=list)
    n_point: list[int] = field(default_factory=list)
    condition: float = float("nan")
    condition_plane: float = float("nan")
    n_accessed_mean: float = float("nan")
    n_eval_mean: float = float("nan")
    converged: bool = False
    rejected: bool = False
    no_correspondences: bool = False


def _lever(x: NavState, extrinsic: RigidTransform, points: FloatArray) -> tuple[FloatArray, FloatArray]:
    """IMU-frame and world-frame positions of LiDAR points."""
    imu = extrinsic.apply(points)
    return imu, imu @ x.rotation.T + x.position


def _rotated_covs(x: NavState, extrinsic: RigidTransform, covs: FloatArray) -> FloatArray:
    r_tot = x.rotation @ extrinsic.rotation
    return np.einsum("ij,njk,lk->nil", r_tot, covs, r_tot)


def _pose_rows(x: NavState, imu: FloatArray, directions: FloatArray) -> FloatArray:
    """Rows ``[u, -u^T R skew(p_I)]`` of the derivative of ``u . (R p_I + t)``."""
    h = np.zeros((len(imu), STATE_DIM))
    h[:, POS] = directions
    h[:, ROT] = np.cross(imu, directions @ x.rotation)
    return h


def plane_terms(
    points: FloatArray,
    covs: FloatArray,
    normals: FloatArray,
    centroids: FloatArray,
    plane_covs: FloatArray,
    x: NavState,
    extrinsic: RigidTransform,
) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Batched point-to-plane residuals, Jacobian rows and variances.

    Args:
        points: ``(k, 3)`` LiDAR points
        covs: ``(k, 3, 3)`` their sensor covariances
        normals: ``(k, 3)`` plane normals
        centroids: ``(k, 3)`` plane centroids
        plane_covs: ``(k, 6, 6)`` covariances of ``(normal, centroid)``
        x: Linearization state
        extrinsic: IMU-from-LiDAR transform

    Returns:
        ``z`` (k,), ``H`` (k, 18) and ``R`` (k,)
    """
    imu, world = _lever(x, extrinsic, points)
    diff = world - centroids
    z = np.einsum("ki,ki->k", normals, diff)
    h = _pose_rows(x, imu, normals)
    a = np.concatenate([diff, -normals], axis=1)
    r = np.einsum("ki,kij,kj->k", a, plane_covs, a) + np.einsum(
        "ki,kij,kj->k", normals, _rotated_covs(x, extrinsic, covs), normals
    )
    return z, h, np.maximum(r, R_FLOOR)


def discretization_variance(n_accessed: ArrayLike, n_eval: ArrayLike, d_root: float) -> FloatArray:
    """Extra point-to-point variance from map sparsity: ``N_accessed * d_root^2 / N_eval``."""
    return np.asarray(n_accessed, dtype=np.float64) * d_root * d_root / np.asarray(n_eval, dtype=np.float64)


def point_terms(
    points: FloatArray,
    covs: FloatArray,
    targets: FloatArray,
    target_covs: FloatArray,
    n_accessed: ArrayLike,
    n_eval: ArrayLike,
    x: NavState,
    extrinsic: RigidTransform,
    cfg: Config,
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, FloatArray]:
    """Batched point-to-point terms on the residual norm.

    Terms whose residual is shorter than ``EPS_DIRECTION`` have no defined
    direction and are dropped.

    Returns:
        ``keep`` mask over the inputs, then ``z``, ``H``, ``R_comb`` and
        ``R_disc`` of the kept terms
    """
    imu, world = _lever(x, extrinsic, points)
    residual = world - targets
    norm = np.linalg.norm(residual, axis=1)
    keep = norm > EPS_DIRECTION
    imu, residual, norm = imu[keep], residual[keep], norm[keep]
    u = residual / norm[:, None] if len(norm) else np.zeros((0, 3))

    h = _pose_rows(x, imu, u)
    total = _rotated_covs(x, extrinsic, covs[keep]) + target_covs[keep]
    r_norm = np.einsum("ki,kij,kj->k", u, total, u)
    if cfg.discretization_variance:
        r_disc = discretization_variance(np.asarray(n_accessed)[keep], np.asarray(n_eval)[keep], cfg.d_root)
    else:
        r_disc = np.zeros(len(norm))
    r = np.maximum(cfg.lambda_po * (r_norm + r_disc), R_FLOOR)
    return keep, norm, h, r, r_disc


def plane_term(corr: Correspondence, x: NavState, extrinsic: RigidTransform | None = None) -> PlaneTerm:
    """Point-to-plane term of one plane correspondence (query in the LiDAR frame)."""
    if corr.kind != "plane":
        raise ValueError(f"Expected a plane correspondence, got '{corr.kind}'")
    z, h, r = plane_terms(
        corr.query[None],
        corr.query_cov[None],
        corr.normal[None],  # type: ignore[index]
        corr.centroid[None],  # type: ignore[index]
        corr.plane_cov[None],  # type: ignore[index]
        x,
        extrinsic or RigidTransform.identity(),
    )
    return PlaneTerm(float(z[0]), h[0], float(r[0]))


def point_term(
    corr: Correspondence,
    x: NavState,
    extrinsic: RigidTransform | None = None,
    cfg: Config | None = None,
) -> PointTerm | None:
    """Point-to-point term of one point correspondence, or None when the residual is too short."""
    if corr.kind != "point":
        raise ValueError(f"Expected a point correspondence, got '{corr.kind}'")
    cfg = cfg or Config()
    stats = corr.stats or SearchStats(1, 1)
    keep, z, h, r, r_disc = point_terms(
        corr.query[None],
        corr.query_cov[None],
        corr.target[None],  # type: ignore[index]
        corr.target_cov[None],  # type: ignore[index]
        [stats.n_accessed],
        [stats.n_eval],
        x,
        extrinsic or RigidTransform.identity(),
        cfg,
    )
    if not keep[0]:
        return None
    return PointTerm(float(z[0]), h[0], float(r[0]), float(r_disc[0]), stats)


def compute_J(x_iter: NavState, x_prior: NavState) -> FloatArray:  # noqa: N802
    """Jacobian of ``boxminus(boxplus(x_iter, d), x_prior)`` with respect to ``d`` at zero."""
    j = np.eye(STATE_DIM)
    j[ROT, ROT] = right_jacobian_inv(so3_log(x_prior.rotation.T @ x_iter.rotation))
    return j


def _condition(h: FloatArray, r: FloatArray) -> float:
    if len(r) == 0:
        return float("inf")
    pose = h[:, :6]
    info = (pose / r[:, None]).T @ pose
    eig = np.linalg.eigvalsh(0.5 * (info + info.T))
    if eig[0] < _CONDITION_FLOOR:
        return float("inf")
    return float(eig[-1] / eig[0])


def condition_number(terms: Sequence[PlaneTerm | PointTerm]) -> float:
    """Condition number of the pose block of ``sum H^T R^-1 H`` (``inf`` when rank deficient)."""
    if not terms:
        return float("inf")
    h = np.array([t.h for t in terms])
    r = np.array([t.r for t in terms])
    return _condition(h, r)


def gate_covariances(
    x: NavState,
    P: FloatArray,
    points: FloatArray,
    covs: FloatArray,
    extrinsic: RigidTransform,
) -> FloatArray:
    """World covariances of LiDAR points including the pose uncertainty of ``P``."""
    imu = extrinsic.apply(points)
    jac = np.zeros((len(points), 3, 6))
    jac[:, :, 0:3] = np.eye(3)
    jac[:, :, 3:6] = -np.einsum("ij,njk->nik", x.rotation, np.array([skew(p) for p in imu]).reshape(-1, 3, 3))
    pose = P[:6, :6]
    return _rotated_covs(x, extrinsic, covs) + np.einsum("nij,jk,nlk->nil", jac, pose, jac)


def _stack(
    x: NavState,
    points: FloatArray,
    covs: FloatArray,
    corr: CorrespondenceSet,
    extrinsic: RigidTransform,
    cfg: Config,
) -> tuple[FloatArray, FloatArray, FloatArray, int, int, SearchStats]:
    zp, hp, rp = plane_terms(
        points[corr.plane_index],
        covs[corr.plane_index],
        corr.normals,
        corr.centroids,
        corr.plane_covs,
        x,
        extrinsic,
    )
    keep, zq, hq, rq, _ = point_terms(
        points[corr.point_index],
        covs[corr.point_index],
        corr.targets,
        corr.target_covs,
        corr.n_accessed,
        corr.n_eval,
        x,
        extrinsic,
        cfg,
    )
    stats = SearchStats(int(corr.n_accessed[keep].sum()), int(corr.n_eval[keep].sum()))
    return (
        np.concatenate([zp, zq]),
        np.concatenate([hp, hq]),
        np.concatenate([rp, rq]),
        len(zp),
        len(zq),
        stats,
    )


def iterated_update(
    x_prior: NavState,
    P_prior: FloatArray,
    points: ArrayLike,
    vmap: VoxelMap,
    cfg: Config | None = None,
    extrinsic: RigidTransform | None = None,
) -> UpdateResult:
    """Iterated Kalman update of the propagated state against the map.

    Every iteration re-transforms the scan, rebuilds both correspondence sets
    and solves in state dimension. Iteration stops when the step norm drops
    below ``tau_converge`` or after ``max_iterations``.

    Args:
        x_prior: Propagated state
        P_prior: Propagated covariance
        points: ``(n, 3)`` downsampled LiDAR points
        vmap: Map to register against
        cfg: Configuration (default: ``Config()``)
        extrinsic: IMU-from-LiDAR transform (default: ``cfg.extrinsic``)

    Returns:
        Posterior and diagnostics; the prior itself when nothing matched or
        the arithmetic went non-finite
    """
    cfg = cfg or Config()
    extrinsic = extrinsic or cfg.extrinsic
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    covs = point_covariances(pts, cfg.range_sigma, cfg.bearing_sigma)
    result = UpdateResult(x_prior, P_prior)
    if len(pts) == 0:
        logger.warning("Update skipped: no points")
        result.no_correspondences = True
        return result

    x_iter = x_prior
    posterior_cov: FloatArray | None = None
    eye = np.eye(STATE_DIM)
    try:
        for iteration in range(cfg.max_iterations):
            j_inv = np.linalg.inv(compute_J(x_iter, x_prior))
            p_iter = j_inv @ P_prior @ j_inv.T

            _, world = _lever(x_iter, extrinsic, pts)
            gate = gate_covariances(x_iter, p_iter, pts, covs, extrinsic)
            corr = vmap.find_correspondences(
                world, gate, cfg.closest_threshold, searcher=cfg.searcher, hybrid=cfg.hybrid_metric
            )
            z, h, r, n_pl, n_po, stats = _stack(x_iter, pts, covs, corr, extrinsic, cfg)
            if len(z) == 0:
                logger.warning("No correspondences at iteration %d", iteration)
                result.no_correspondences = True
                break
            if not (np.all(np.isfinite(z)) and np.all(np.isfinite(h)) and np.all(np.isfinite(r))):
                raise FloatingPointError("non-finite residual")

            ht_rinv = h.T / r
            info = ht_rinv @ h + np.linalg.inv(p_iter)
            gain = np.linalg.solve(info, ht_rinv)
            i_kh = eye - gain @ h
            delta = -gain @ z - i_kh @ j_inv @ boxminus(x_iter, x_prior)
            if not np.all(np.isfinite(delta)):
                raise FloatingPointError("non-finite state correction")

            x_iter = boxplus(x_iter, delta)
            posterior_cov = i_kh @ p_iter
            result.iterations = iteration + 1
            result.n_plane.append(n_pl)
            result.n_point.append(n_po)
            result.condition = _condition(h, r)
            result.condition_plane = _condition(h[:n_pl], r[:n_pl])
            result.n_accessed_mean = stats.n_accessed / n_po if n_po else float("nan")
            result.n_eval_mean = stats.n_eval / n_po if n_po else float("nan")
            if np.linalg.norm(delta) < cfg.tau_converge:
                result.converged = True
                break
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        logger.error("Scan rejected: %s", exc)
        return UpdateResult(x_prior, P_prior, rejected=True)

    if posterior_cov is None:
        return result
    if not (x_iter.is_finite() and np.all(np.isfinite(posterior_cov))):
        logger.error("Scan rejected: non-finite posterior")
        return UpdateResult(x_prior, P_prior, rejected=True)

    result.state = x_iter
    result.covariance = 0.5 * (posterior_cov + posterior_cov.T)
    return result


def integrate_scan(
    points: ArrayLike,
    x: NavState,
    vmap: VoxelMap,
    cfg: Config | None = None,
    extrinsic: RigidTransform | None = None,
) -> None:
    """Insert LiDAR points into the map at pose ``x`` with rotated sensor covariances."""
    cfg = cfg or Config()
    extrinsic = extrinsic or cfg.extrinsic
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return
    covs = point_covariances(pts, cfg.range_sigma, cfg.bearing_sigma)
    _, world = _lever(x, extrinsic, pts)
    vmap.insert(world, _rotated_covs(x, extrinsic, covs))
