"""Point clouds with a Doppler channel, nearest-neighbour search and normals."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .se3 import RigidTransform

# Neighbours fetched per query so that equidistant candidates can be
# resolved to the lowest index.
_TIE_CANDIDATES = 4


@dataclass(frozen=True)
class DopplerPoint:
    position: np.ndarray
    doppler: float | None = None
    normal: np.ndarray | None = None


@dataclass(eq=False)
class DopplerPointCloud:
    """Ordered points in one sensor frame captured over one scan period.

    ``doppler`` is the measured radial velocity per point (m/s, receding is
    positive) or ``None`` when the channel is absent.  ``normals`` holds one
    unit normal per point; rows of NaN mark points whose normal could not be
    estimated.
    """

    positions: np.ndarray
    doppler: np.ndarray | None = None
    normals: np.ndarray | None = None
    period_s: float = 0.1
    frame_id: str = "lidar"
    timestamp_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        n = len(self.positions)
        if self.doppler is not None:
            self.doppler = np.asarray(self.doppler, dtype=float).reshape(n)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(n, 3)
        if not self.period_s > 0:
            raise ValueError(f"period_s must be positive, got {self.period_s}")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")
        if self.doppler is not None and not np.all(np.isfinite(self.doppler)):
            raise ValueError("Doppler values must be finite")

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> DopplerPoint:
        normal = None
        if self.normals is not None and np.all(np.isfinite(self.normals[i])):
            normal = self.normals[i].copy()
        doppler = None if self.doppler is None else float(self.doppler[i])
        return DopplerPoint(self.positions[i].copy(), doppler, normal)

    @property
    def has_doppler(self) -> bool:
        return self.doppler is not None

    @property
    def normal_mask(self) -> np.ndarray:
        """True where a valid normal is present."""
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    def with_normals(self, normals) -> "DopplerPointCloud":
        return replace(self, normals=normals)

    def transformed(self, T: RigidTransform, frame_id: str | None = None) -> "DopplerPointCloud":
        normals = None if self.normals is None else T.rotate(self.normals)
        return replace(
            self,
            positions=T.apply(self.positions),
            normals=normals,
            frame_id=self.frame_id if frame_id is None else frame_id,
        )

    def select(self, mask) -> "DopplerPointCloud":
        return replace(
            self,
            positions=self.positions[mask],
            doppler=None if self.doppler is None else self.doppler[mask],
            normals=None if self.normals is None else self.normals[mask],
        )


class SpatialIndex:
    """Exact Euclidean nearest-neighbour index over a fixed set of points."""

    def __init__(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(points) == 0:
            raise ValueError("cannot build a spatial index over an empty cloud")
        self.points = points
        self._tree = cKDTree(points)

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries, max_dist: float = np.inf):
        """Nearest neighbour for each query row; ties go to the lowest index.

        Returns ``(indices, distances)``; queries with no neighbour closer
        than ``max_dist`` get index ``-1`` and distance ``inf``.
        """
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        k = min(_TIE_CANDIDATES, len(self.points))
        d, i = self._tree.query(q, k=k, distance_upper_bound=max_dist)
        d = d.reshape(len(q), k)
        i = i.reshape(len(q), k)
        tie = d == d[:, :1]
        best = np.where(tie, i, np.iinfo(np.int64).max).min(axis=1)
        dist = d[:, 0]
        miss = ~np.isfinite(dist)
        if k < len(self.points):
            # Every fetched candidate ties: more may lie at the same distance.
            for row in np.flatnonzero(tie.all(axis=1) & ~miss):
                cand = np.array(sorted(self._tree.query_ball_point(q[row], dist[row] * (1 + 1e-12) + 1e-300)))
                dd = np.linalg.norm(self.points[cand] - q[row], axis=1)
                best[row] = cand[np.flatnonzero(dd == dd.min())[0]]
        best[miss] = -1
        return best.astype(np.int64), dist


def build_index(cloud) -> SpatialIndex:
    points = cloud.positions if isinstance(cloud, DopplerPointCloud) else cloud
    return SpatialIndex(points)


def nearest(index: SpatialIndex, query) -> tuple[int, float]:
    i, d = index.query(np.asarray(query, dtype=float).reshape(1, 3))
    return int(i[0]), float(d[0])


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    source: np.ndarray
    target: np.ndarray
    sq_dist: np.ndarray

    def __len__(self) -> int:
        return len(self.source)

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    def subset(self, mask) -> "CorrespondenceSet":
        return CorrespondenceSet(self.source[mask], self.target[mask], self.sq_dist[mask])


def match(transformed_source, index: SpatialIndex, max_dist: float) -> CorrespondenceSet:
    """Pair each source point with its nearest target point closer than ``max_dist``."""
    if not max_dist > 0:
        raise ValueError("max_dist must be positive")
    pts = transformed_source.positions if isinstance(transformed_source, DopplerPointCloud) else transformed_source
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return CorrespondenceSet.empty()
    idx, dist = index.query(pts, max_dist=max_dist)
    keep = (idx >= 0) & (dist < max_dist)
    src = np.flatnonzero(keep)
    return CorrespondenceSet(src, idx[keep], dist[keep] ** 2)


def estimate_normals(cloud: DopplerPointCloud, k: int = 20, viewpoint=(0.0, 0.0, 0.0),
                     rank_tol: float = 1e-10) -> DopplerPointCloud:
    """PCA normals from the ``k`` nearest neighbours of every point.

    Normals point toward ``viewpoint`` (the sensor origin by default).  A
    neighbourhood whose covariance has rank below two gets a NaN normal.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    if len(cloud) < k:
        raise ValueError(f"need at least k={k} points, cloud has {len(cloud)}")
    pts = cloud.positions
    _, nbr = cKDTree(pts).query(pts, k=k)
    nb = pts[nbr]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)
    normals = evecs[:, :, 0].copy()
    flip = np.einsum("ni,ni->n", normals, np.asarray(viewpoint, dtype=float) - pts) < 0
    normals[flip] *= -1.0
    scale = np.maximum(evals[:, 2], np.finfo(float).tiny)
    degenerate = evals[:, 1] <= rank_tol * scale
    normals[degenerate] = np.nan
    return cloud.with_normals(normals)
