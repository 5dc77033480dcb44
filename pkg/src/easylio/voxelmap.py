"""World-frame voxel hash map with per-voxel planes and correspondence search.

Each root voxel stores its most recent points with their covariances and a
plane fitted to them. A query point is matched to a plane of one of its
candidate voxels (the root and the neighbors sharing the region of the root
it falls in) through a 3-sigma gate. When no plane passes, the nearest stored
point is searched, visiting a neighbor only when its box can still hold a
closer point.
"""

from __future__ import annotations

import itertools
import logging
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from easylio.config import Config
from easylio.geometry import FloatArray

logger = logging.getLogger(__name__)

Key = tuple[int, int, int]
IntArray = NDArray[np.int64]

# Root first, then the 26 neighbors in lexicographic order
CANDIDATE_OFFSETS: IntArray = np.array(
    [(0, 0, 0)] + [o for o in itertools.product((-1, 0, 1), repeat=3) if o != (0, 0, 0)], dtype=np.int64
)
FACE_OFFSETS: IntArray = np.array(
    [(0, 0, 0)] + [tuple(o) for o in CANDIDATE_OFFSETS[1:] if np.count_nonzero(o) == 1], dtype=np.int64
)

MAP_COLUMNS = ("kx", "ky", "kz", "nx", "ny", "nz", "qx", "qy", "qz", "lambda1", "valid", "count")

# Smallest eigenvalue gap for a usable normal (m^2)
_EIGEN_GAP = 1e-9
_KEY_BIAS = 1 << 20
_KEY_BITS = 21


class SearchStats:
    """Work counters of one nearest-neighbor search.

    Attributes:
        n_accessed: Voxels whose point lists were scanned
        n_eval: Points whose distance was evaluated
    """

    __slots__ = ("n_accessed", "n_eval")

    def __init__(self, n_accessed: int = 0, n_eval: int = 0) -> None:
        """Initialize the counters."""
        self.n_accessed = n_accessed
        self.n_eval = n_eval

    def __eq__(self, other: object) -> bool:
        """Compare counters."""
        return isinstance(other, SearchStats) and (self.n_accessed, self.n_eval) == (other.n_accessed, other.n_eval)

    def __repr__(self) -> str:
        """Return string representation of the counters."""
        return f"SearchStats(n_accessed={self.n_accessed}, n_eval={self.n_eval})"


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane fitted to the points of a voxel.

    Attributes:
        normal: Unit normal, oriented so that ``normal @ centroid <= 0``
        centroid: Mean of the points
        eigenvalues: Ascending eigenvalues of the scatter matrix
        covariance: 6x6 covariance of ``(normal, centroid)``
        valid: Whether the points are planar enough to match against
    """

    normal: FloatArray
    centroid: FloatArray
    eigenvalues: FloatArray
    covariance: FloatArray
    valid: bool


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Association of one query point with a plane or a stored point.

    Attributes:
        kind: ``"plane"`` or ``"point"``
        query: Query point in the LiDAR frame
        query_cov: Its covariance
        normal: Plane normal (plane kind)
        centroid: Plane centroid (plane kind)
        plane_cov: Covariance of ``(normal, centroid)`` (plane kind)
        target: Matched map point (point kind)
        target_cov: Its covariance (point kind)
        stats: Search counters (point kind)
    """

    kind: Literal["plane", "point"]
    query: FloatArray
    query_cov: FloatArray
    normal: FloatArray | None = None
    centroid: FloatArray | None = None
    plane_cov: FloatArray | None = None
    target: FloatArray | None = None
    target_cov: FloatArray | None = None
    stats: SearchStats | None = None


@dataclass
class CorrespondenceSet:
    """Plane and point matches of a batch of queries, as parallel arrays."""

    plane_index: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    normals: FloatArray = field(default_factory=lambda: np.zeros((0, 3)))
    centroids: FloatArray = field(default_factory=lambda: np.zeros((0, 3)))
    plane_covs: FloatArray = field(default_factory=lambda: np.zeros((0, 6, 6)))
    point_index: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    targets: FloatArray = field(default_factory=lambda: np.zeros((0, 3)))
    target_covs: FloatArray = field(default_factory=lambda: np.zeros((0, 3, 3)))
    n_accessed: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    n_eval: IntArray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_plane(self) -> int:
        """Number of plane matches."""
        return len(self.plane_index)

    @property
    def n_point(self) -> int:
        """Number of point matches."""
        return len(self.point_index)


def point_covariance_lidar(p: ArrayLike, sigma_range: float, sigma_bearing: float) -> FloatArray:
    """Sensor-frame covariance of a return: range noise along the ray, angular noise across it."""
    return point_covariances(np.asarray(p, dtype=np.float64).reshape(1, 3), sigma_range, sigma_bearing)[0]


def point_covariances(points: ArrayLike, sigma_range: float, sigma_bearing: float) -> FloatArray:
    """Batched :func:`point_covariance_lidar` for ``(n, 3)`` points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    # Zero-norm points get a zero covariance
    w = pts / np.where(r > 0, r, 1.0)[:, None]
    ray = np.einsum("ni,nj->nij", w, w)
    across = np.where((r > 0)[:, None, None], np.eye(3)[None] - ray, 0.0)
    return (r**2 * sigma_bearing**2)[:, None, None] * across + sigma_range**2 * ray


def _side(u: FloatArray) -> IntArray:
    return np.where(u < 1.0 / 3.0, -1, np.where(u >= 2.0 / 3.0, 1, 0)).astype(np.int64)


def candidate_mask(points: ArrayLike, d_root: float) -> tuple[IntArray, NDArray[np.bool_]]:
    """Root keys and the candidate selection over ``CANDIDATE_OFFSETS`` for many points.

    Each axis of the local coordinate inside the root is split into thirds.
    The low and high thirds add the neighbor on that side; the middle third
    adds none. Combinations of the added axes are included too.

    Returns:
        ``(n, 3)`` root keys and an ``(n, 27)`` boolean mask
    """
    scaled = np.asarray(points, dtype=np.float64).reshape(-1, 3) / d_root
    keys = np.floor(scaled).astype(np.int64)
    side = _side(scaled - keys)
    offsets = CANDIDATE_OFFSETS[None]
    mask = np.all((offsets == 0) | (offsets == side[:, None, :]), axis=2)
    return keys, mask


def candidate_voxels(p: ArrayLike, d_root: float) -> list[Key]:
    """Candidate voxel keys of one point, root first (1, 2, 4 or 8 of them)."""
    keys, mask = candidate_mask(p, d_root)
    return [tuple(int(v) for v in keys[0] + o) for o in CANDIDATE_OFFSETS[mask[0]]]  # type: ignore[misc]


def distance_to_voxel(p: ArrayLike, key: Iterable[int], d_root: float) -> float:
    """Euclidean distance from ``p`` to the box of voxel ``key`` (0 inside)."""
    p = np.asarray(p, dtype=np.float64)
    lo = np.asarray(tuple(key), dtype=np.float64) * d_root
    hi = lo + d_root
    excess = np.maximum(np.maximum(lo - p, 0.0), p - hi)
    return float(np.sqrt(np.sum(excess * excess)))


def _orient(normal: FloatArray, centroid: FloatArray) -> FloatArray:
    """Flip ``normal`` so that ``normal @ centroid <= 0``; ties take the +z side."""
    dot = float(normal @ centroid)
    if dot > 0.0:
        return -normal
    if dot == 0.0:
        for v in normal[::-1]:
            if v != 0.0:
                return normal if v > 0.0 else -normal
    return normal


def _eigen(points: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray]:
    """Centroid, ascending eigenvalues, eigenvectors and oriented normal of the scatter matrix."""
    centroid = points.mean(axis=0)
    diff = points - centroid
    eigenvalues, eigenvectors = np.linalg.eigh(diff.T @ diff / len(points))
    return centroid, eigenvalues, eigenvectors, _orient(eigenvectors[:, 0].copy(), centroid)


def plane_covariance(points: ArrayLike, covs: ArrayLike) -> FloatArray:
    """First-order covariance of the fitted ``(normal, centroid)`` from per-point covariances.

    The centroid moves by ``1/N`` of each point perturbation. The normal moves
    toward the other two eigenvectors in proportion to the inverse eigenvalue
    gaps.

    Args:
        points: ``(N, 3)`` points
        covs: ``(N, 3, 3)`` point covariances

    Returns:
        6x6 covariance, normal block first
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cvs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
    centroid, eigenvalues, eigenvectors, normal = _eigen(pts)
    return _plane_covariance(pts, cvs, centroid, eigenvalues, eigenvectors, normal)


def _plane_covariance(
    points: FloatArray,
    covs: FloatArray,
    centroid: FloatArray,
    eigenvalues: FloatArray,
    eigenvectors: FloatArray,
    normal: FloatArray,
) -> FloatArray:
    n_pts = len(points)
    diff = points - centroid
    proj_n = diff @ normal
    jac_n = np.zeros((n_pts, 3, 3))
    for k in (1, 2):
        u = eigenvectors[:, k]
        scale = 1.0 / (n_pts * (eigenvalues[0] - eigenvalues[k]))
        proj_u = diff @ u
        jac_n += scale * (
            proj_u[:, None, None] * np.einsum("i,j->ij", u, normal)[None]
            + proj_n[:, None, None] * np.einsum("i,j->ij", u, u)[None]
        )
    jac = np.concatenate([jac_n, np.broadcast_to(np.eye(3) / n_pts, (n_pts, 3, 3))], axis=1)
    cov = np.einsum("nij,njk,nlk->il", jac, covs, jac)
    return 0.5 * (cov + cov.T)


def fit_plane(points: ArrayLike, covs: ArrayLike, threshold: float = 0.01, min_points: int = 5) -> Plane:
    """Fit a plane to stored points.

    Args:
        points: ``(N, 3)`` points
        covs: ``(N, 3, 3)`` point covariances
        threshold: Largest smallest-eigenvalue of a valid plane (m^2)
        min_points: Smallest support of a valid plane

    Returns:
        The fitted plane; ``valid`` is False for thin support, thick scatter
        or a degenerate eigenvalue gap
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cvs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
    centroid, eigenvalues, eigenvectors, normal = _eigen(pts)
    valid = len(pts) >= min_points and eigenvalues[0] < threshold and eigenvalues[1] - eigenvalues[0] > _EIGEN_GAP
    covariance = (
        _plane_covariance(pts, cvs, centroid, eigenvalues, eigenvectors, normal) if valid else np.zeros((6, 6))
    )
    return Plane(normal, centroid, eigenvalues, covariance, bool(valid))


class RootVoxel:
    """Points, covariances and plane of one root voxel.

    Args:
        key: Integer voxel index
    """

    __slots__ = ("key", "points", "covs", "plane")

    def __init__(self, key: Key) -> None:
        """Initialize an empty voxel."""
        self.key = key
        self.points: FloatArray = np.zeros((0, 3))
        self.covs: FloatArray = np.zeros((0, 3, 3))
        self.plane: Plane | None = None

    def __len__(self) -> int:
        """Return the number of stored points."""
        return len(self.points)

    def append(self, points: FloatArray, covs: FloatArray, max_points: int) -> None:
        """Store new points, evicting the oldest beyond ``max_points``."""
        self.points = np.concatenate([self.points, points])[-max_points:]
        self.covs = np.concatenate([self.covs, covs])[-max_points:]

    def refit(self, threshold: float, min_points: int) -> None:
        """Refit the plane when there is enough support."""
        if len(self.points) >= min_points:
            self.plane = fit_plane(self.points, self.covs, threshold, min_points)
        else:
            self.plane = None

    @property
    def plane_valid(self) -> bool:
        """Whether a usable plane is attached."""
        return self.plane is not None and self.plane.valid


def _encode(keys: IntArray) -> IntArray:
    """Pack ``(..., 3)`` keys into sortable int64 codes."""
    biased = keys + _KEY_BIAS
    return (biased[..., 0] << (2 * _KEY_BITS)) | (biased[..., 1] << _KEY_BITS) | biased[..., 2]


class VoxelMap:
    """Hash map from voxel keys to root voxels.

    Args:
        d_root: Voxel edge length (m)
        max_points: Points kept per voxel
        min_plane_points: Smallest support of a plane
        plane_threshold: Largest smallest-eigenvalue of a valid plane (m^2)
    """

    def __init__(
        self,
        d_root: float = 0.5,
        max_points: int = 50,
        min_plane_points: int = 5,
        plane_threshold: float = 0.01,
    ) -> None:
        """Initialize an empty map."""
        self.d_root = d_root
        self.max_points = max_points
        self.min_plane_points = min_plane_points
        self.plane_threshold = plane_threshold
        self.voxels: dict[Key, RootVoxel] = {}
        self._planes: tuple[IntArray, FloatArray, FloatArray, FloatArray] | None = None

    @classmethod
    def from_config(cls, cfg: Config) -> VoxelMap:
        """Create an empty map with the configured voxel parameters."""
        return cls(cfg.d_root, cfg.max_points_per_voxel, cfg.min_plane_points, cfg.plane_threshold)

    def __len__(self) -> int:
        """Return the number of voxels."""
        return len(self.voxels)

    def __contains__(self, key: object) -> bool:
        """Check whether a voxel exists."""
        return key in self.voxels

    def __iter__(self) -> Iterator[RootVoxel]:
        """Iterate over voxels."""
        return iter(self.voxels.values())

    def get(self, key: Key) -> RootVoxel | None:
        """Return the voxel at ``key`` if it exists."""
        return self.voxels.get(key)

    @property
    def n_points(self) -> int:
        """Total number of stored points."""
        return sum(len(v) for v in self.voxels.values())

    def key_of(self, p: ArrayLike) -> Key:
        """Root key of a point."""
        k = np.floor(np.asarray(p, dtype=np.float64) / self.d_root).astype(np.int64)
        return (int(k[0]), int(k[1]), int(k[2]))

    def candidate_voxels(self, p: ArrayLike) -> list[Key]:
        """Candidate keys of ``p`` at this map's resolution."""
        return candidate_voxels(p, self.d_root)

    def insert(self, points: ArrayLike, covs: ArrayLike) -> None:
        """Insert world-frame points and refit the planes of the voxels they land in.

        Args:
            points: ``(n, 3)`` world points
            covs: ``(n, 3, 3)`` world covariances
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cvs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
        if len(pts) == 0:
            return
        keys = np.floor(pts / self.d_root).astype(np.int64)
        unique, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        # Stable sort keeps the insertion order inside each voxel
        order = np.argsort(inverse, kind="stable")
        bounds = np.searchsorted(inverse[order], np.arange(len(unique) + 1))
        for i, k in enumerate(unique):
            key = (int(k[0]), int(k[1]), int(k[2]))
            voxel = self.voxels.get(key)
            if voxel is None:
                voxel = self.voxels[key] = RootVoxel(key)
            idx = order[bounds[i] : bounds[i + 1]]
            voxel.append(pts[idx], cvs[idx], self.max_points)
            voxel.refit(self.plane_threshold, self.min_plane_points)
        self._planes = None

    def crop(self, center: ArrayLike, radius: float) -> int:
        """Drop voxels whose centers are outside the axis-aligned box of half-width ``radius``.

        Returns:
            Number of voxels removed
        """
        c = np.asarray(center, dtype=np.float64)
        doomed = [
            key
            for key in self.voxels
            if np.any(np.abs((np.asarray(key, dtype=np.float64) + 0.5) * self.d_root - c) > radius)
        ]
        for key in doomed:
            del self.voxels[key]
        if doomed:
            self._planes = None
            logger.debug("Cropped %d voxels", len(doomed))
        return len(doomed)

    def _plane_index(self) -> tuple[IntArray, FloatArray, FloatArray, FloatArray]:
        """Sorted key codes with normals, centroids and covariances of valid planes."""
        if self._planes is None:
            valid = [v for v in self.voxels.values() if v.plane_valid]
            if valid:
                codes = _encode(np.array([v.key for v in valid], dtype=np.int64))
                order = np.argsort(codes)
                planes = [valid[i].plane for i in order]
                self._planes = (
                    codes[order],
                    np.array([p.normal for p in planes]),  # type: ignore[union-attr]
                    np.array([p.centroid for p in planes]),  # type: ignore[union-attr]
                    np.array([p.covariance for p in planes]),  # type: ignore[union-attr]
                )
            else:
                self._planes = (np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 6, 6)))
        return self._planes

    def _gate_planes(
        self, points: FloatArray, covs: FloatArray
    ) -> tuple[IntArray, IntArray]:
        """Best 3-sigma plane per query.

        Returns:
            Query indices that matched and the index of their plane in ``_plane_index``
        """
        codes, normals, centroids, plane_covs = self._plane_index()
        empty = np.zeros(0, dtype=np.int64)
        if len(codes) == 0 or len(points) == 0:
            return empty, empty

        keys, mask = candidate_mask(points, self.d_root)
        cand = _encode(keys[:, None, :] + CANDIDATE_OFFSETS[None])
        slot = np.clip(np.searchsorted(codes, cand), 0, len(codes) - 1)
        found = mask & (codes[slot] == cand)
        query, order = np.nonzero(found)
        if len(query) == 0:
            return empty, empty
        plane = slot[query, order]

        n = normals[plane]
        diff = points[query] - centroids[plane]
        z = np.einsum("ki,ki->k", n, diff)
        a = np.concatenate([diff, -n], axis=1)
        var = np.einsum("ki,kij,kj->k", a, plane_covs[plane], a) + np.einsum("ki,kij,kj->k", n, covs[query], n)
        passed = z * z < 9.0 * var
        if not passed.any():
            return empty, empty

        query, order, plane = query[passed], order[passed], plane[passed]
        score = (z * z)[passed] / var[passed]
        best = np.lexsort((order, score, query))
        q_sorted = query[best]
        first = np.concatenate([[True], q_sorted[1:] != q_sorted[:-1]])
        return q_sorted[first], plane[best][first]

    def match_plane(self, p: ArrayLike, cov: ArrayLike) -> Correspondence | None:
        """Best gated plane for one world point.

        Args:
            p: World point
            cov: Its world covariance

        Returns:
            A plane correspondence in world terms, or None when no plane passes
        """
        pw = np.asarray(p, dtype=np.float64).reshape(1, 3)
        cw = np.asarray(cov, dtype=np.float64).reshape(1, 3, 3)
        query, plane = self._gate_planes(pw, cw)
        if len(query) == 0:
            return None
        _, normals, centroids, plane_covs = self._plane_index()
        j = int(plane[0])
        return Correspondence("plane", pw[0], cw[0], normals[j], centroids[j], plane_covs[j])

    def _scan(
        self,
        p: FloatArray,
        keys: Iterable[Key],
        tau: float,
        prune: bool,
    ) -> tuple[FloatArray, float, FloatArray, SearchStats] | None:
        stats = SearchStats()
        best: tuple[RootVoxel, int] | None = None
        d_closest = tau
        for i, key in enumerate(keys):
            voxel = self.voxels.get(key)
            if voxel is None:
                continue
            if prune and i > 0 and not distance_to_voxel(p, key, self.d_root) < d_closest:
                continue
            diff = voxel.points - p
            dists = np.sqrt(np.sum(diff * diff, axis=1))
            stats.n_accessed += 1
            stats.n_eval += len(dists)
            j = int(np.argmin(dists))
            if dists[j] < d_closest:
                d_closest = float(dists[j])
                best = (voxel, j)
        if best is None:
            return None
        voxel, j = best
        return voxel.points[j].copy(), d_closest, voxel.covs[j].copy(), stats

    def nn_search_pruned(
        self,
        p: ArrayLike,
        candidates: list[Key] | None = None,
        tau: float | None = None,
    ) -> tuple[FloatArray, float, SearchStats] | None:
        """Nearest stored point among the candidate voxels, skipping boxes that cannot beat the best so far.

        Args:
            p: World point
            candidates: Keys with the root first (default: :meth:`candidate_voxels`)
            tau: Rejection threshold; only points strictly closer are returned
                (default: ``d_root / 3``, which makes the result exact)

        Returns:
            ``(point, distance, stats)`` or None
        """
        p = np.asarray(p, dtype=np.float64)
        keys = self.candidate_voxels(p) if candidates is None else candidates
        found = self._scan(p, keys, self.d_root / 3.0 if tau is None else tau, prune=True)
        return None if found is None else (found[0], found[1], found[3])

    def nn_search_exhaustive(
        self,
        p: ArrayLike,
        tau: float | None = None,
        neighbors: Literal["all26", "face6"] = "all26",
    ) -> tuple[FloatArray, float, SearchStats] | None:
        """Nearest stored point scanning the root and every neighbor (or the 6 face neighbors)."""
        p = np.asarray(p, dtype=np.float64)
        root = np.array(self.key_of(p), dtype=np.int64)
        offsets = CANDIDATE_OFFSETS if neighbors == "all26" else FACE_OFFSETS
        keys = [(int(k[0]), int(k[1]), int(k[2])) for k in root + offsets]
        found = self._scan(p, keys, self.d_root / 3.0 if tau is None else tau, prune=False)
        return None if found is None else (found[0], found[1], found[3])

    def find_correspondences(
        self,
        points: ArrayLike,
        covs: ArrayLike,
        tau: float | None = None,
        searcher: str = "pruned",
        hybrid: bool = True,
    ) -> CorrespondenceSet:
        """Plane matches for every query and point matches for the rest.

        Args:
            points: ``(n, 3)`` world points
            covs: ``(n, 3, 3)`` gate covariances of the world points
            tau: Point-search rejection threshold (default: ``d_root / 3``)
            searcher: ``pruned``, ``all26`` or ``face6``
            hybrid: Whether unmatched queries fall back to point search

        Returns:
            Matches indexed by query position
        """
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        cvs = np.asarray(covs, dtype=np.float64).reshape(-1, 3, 3)
        tau = self.d_root / 3.0 if tau is None else tau

        query, plane = self._gate_planes(pts, cvs)
        _, normals, centroids, plane_covs = self._plane_index()
        out = CorrespondenceSet(
            plane_index=query.astype(np.int64),
            normals=normals[plane] if len(plane) else np.zeros((0, 3)),
            centroids=centroids[plane] if len(plane) else np.zeros((0, 3)),
            plane_covs=plane_covs[plane] if len(plane) else np.zeros((0, 6, 6)),
        )
        if not hybrid or not self.voxels:
            return out

        unmatched = np.ones(len(pts), dtype=bool)
        unmatched[query] = False
        rest = np.flatnonzero(unmatched)
        if len(rest) == 0:
            return out
        keys, mask = candidate_mask(pts[rest], self.d_root)

        index, targets, target_covs, accessed, evaluated = [], [], [], [], []
        for row, i in enumerate(rest):
            p = pts[i]
            if searcher == "pruned":
                cand = [(int(k[0]), int(k[1]), int(k[2])) for k in keys[row] + CANDIDATE_OFFSETS[mask[row]]]
                found = self._scan(p, cand, tau, prune=True)
            elif searcher in ("all26", "face6"):
                offsets = CANDIDATE_OFFSETS if searcher == "all26" else FACE_OFFSETS
                root = np.floor(p / self.d_root).astype(np.int64)
                found = self._scan(p, [(int(k[0]), int(k[1]), int(k[2])) for k in root + offsets], tau, prune=False)
            else:
                raise ValueError(f"Unknown searcher: {searcher}. Valid searchers are: pruned, all26, face6")
            if found is None:
                continue
            index.append(i)
            targets.append(found[0])
            target_covs.append(found[2])
            accessed.append(found[3].n_accessed)
            evaluated.append(found[3].n_eval)

        if index:
            out.point_index = np.array(index, dtype=np.int64)
            out.targets = np.array(targets)
            out.target_covs = np.array(target_covs)
            out.n_accessed = np.array(accessed, dtype=np.int64)
            out.n_eval = np.array(evaluated, dtype=np.int64)
        return out

    def to_frame(self) -> pd.DataFrame:
        """One row per voxel with its key, plane, smallest eigenvalue, validity and point count."""
        rows = []
        for key in sorted(self.voxels):
            voxel = self.voxels[key]
            if voxel.plane is not None:
                n, q, lam = voxel.plane.normal, voxel.plane.centroid, voxel.plane.eigenvalues[0]
            else:
                n, q, lam = np.full(3, np.nan), voxel.points.mean(axis=0), np.nan
            rows.append([*key, *n, *q, lam, int(voxel.plane_valid), len(voxel)])
        return pd.DataFrame(rows, columns=list(MAP_COLUMNS))

    def dump(self, path: str | os.PathLike[str]) -> None:
        """Write :meth:`to_frame` as CSV."""
        self.to_frame().to_csv(path, index=False, float_format="%.9g", lineterminator="\n")
