"""Closest-point correspondences and outlier rejection."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NoCorrespondences
from .geometry import Point, PointCloud, squared_norms

logger = logging.getLogger(__name__)

DEFAULT_LEAF_SIZE = 16
DEFAULT_MEDIAN_FACTOR = 2.5

# Candidates whose tree distance is within this relative margin of the best one
# are re-scored exactly before the lowest-index tie-break.
_TIE_MARGIN = 1e-7


def _readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(frozen=True, eq=False)
class CorrespondenceSet:
    """Pairs (source index, destination index, squared distance), sorted by source."""

    source_indices: np.ndarray
    dest_indices: np.ndarray
    squared_distances: np.ndarray

    def __post_init__(self) -> None:
        src = np.asarray(self.source_indices, dtype=np.intp).reshape(-1).copy()
        dst = np.asarray(self.dest_indices, dtype=np.intp).reshape(-1).copy()
        sq = np.asarray(self.squared_distances, dtype=np.float64).reshape(-1).copy()
        if not (src.shape == dst.shape == sq.shape):
            raise ValueError("correspondence arrays must have equal length")
        if np.any(sq < 0):
            raise ValueError("squared distances must be non-negative")
        if src.size > 1 and np.any(np.diff(src) <= 0):
            raise ValueError("source indices must be unique and increasing")
        object.__setattr__(self, "source_indices", _readonly(src))
        object.__setattr__(self, "dest_indices", _readonly(dst))
        object.__setattr__(self, "squared_distances", _readonly(sq))

    @classmethod
    def empty(cls) -> "CorrespondenceSet":
        return cls(np.empty(0, np.intp), np.empty(0, np.intp), np.empty(0))

    def __len__(self) -> int:
        return int(self.source_indices.shape[0])

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return [
            (int(i), int(j), float(d))
            for i, j, d in zip(self.source_indices, self.dest_indices, self.squared_distances)
        ]

    def subset(self, mask: np.ndarray) -> "CorrespondenceSet":
        return CorrespondenceSet(
            self.source_indices[mask], self.dest_indices[mask], self.squared_distances[mask]
        )


@dataclass(frozen=True)
class RejectionPolicy:
    """Outlier rejection applied to the candidate pairs of one matching round.

    Stages run in order: absolute distance cap, relative cap
    (``median_factor`` times the median candidate distance), then trimming to the
    ``ceil((1 - trim_fraction) * n)`` closest pairs. Distances are in metres.
    """

    max_distance: Optional[float] = None
    median_factor: Optional[float] = None
    trim_fraction: float = 0.0

    def __post_init__(self) -> None:
        if self.max_distance is not None and self.max_distance < 0:
            raise ValueError("max_distance must be non-negative")
        if self.median_factor is not None and self.median_factor <= 0:
            raise ValueError("median_factor must be positive")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must lie in [0, 1)")

    @classmethod
    def none(cls) -> "RejectionPolicy":
        return cls()

    @classmethod
    def absolute(cls, max_distance: float) -> "RejectionPolicy":
        return cls(max_distance=max_distance)

    @classmethod
    def relative(cls, factor: float = DEFAULT_MEDIAN_FACTOR) -> "RejectionPolicy":
        return cls(median_factor=factor)

    @classmethod
    def trimmed(cls, fraction: float) -> "RejectionPolicy":
        return cls(trim_fraction=fraction)

    @property
    def rejects_nothing(self) -> bool:
        return self.max_distance is None and self.median_factor is None and self.trim_fraction == 0.0

    def keep_mask(self, squared_distances: np.ndarray) -> np.ndarray:
        """Boolean mask of the pairs that survive, in candidate order."""
        keep = np.ones(squared_distances.shape[0], dtype=bool)
        if self.max_distance is not None:
            keep &= squared_distances <= self.max_distance**2
        if self.median_factor is not None and np.any(keep):
            median = float(np.median(np.sqrt(squared_distances[keep])))
            keep &= squared_distances <= (self.median_factor * median) ** 2
        if self.trim_fraction > 0.0 and np.any(keep):
            survivors = np.flatnonzero(keep)
            # rounded first: (1 - 0.7) * 10 is 3.0000000000000004 in floating point
            n_keep = math.ceil(round((1.0 - self.trim_fraction) * survivors.shape[0], 9))
            # stable: equal distances keep the lower source index
            order = np.argsort(squared_distances[survivors], kind="stable")
            trimmed = np.zeros_like(keep)
            trimmed[survivors[order[:n_keep]]] = True
            keep = trimmed
        return keep


class NearestIndex(Protocol):
    """Anything that answers exact nearest-neighbour queries over a cloud."""

    cloud: PointCloud

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass(eq=False)
class ExhaustiveIndex:
    """Linear-scan nearest neighbour search; the reference the k-d tree must match."""

    cloud: PointCloud

    def __post_init__(self) -> None:
        self.cloud.require_points()

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        points = self.cloud.points
        indices = np.empty(q.shape[0], dtype=np.intp)
        best = np.empty(q.shape[0])
        for row, point in enumerate(q):
            sq = squared_norms(points - point)
            j = int(np.argmin(sq))  # first minimum is the lowest index
            indices[row] = j
            best[row] = sq[j]
        return indices, best


@dataclass(eq=False)
class SpatialIndex:
    """Balanced k-d tree over destination points with lowest-index tie-breaking.

    The tree proposes a nearest point; any query whose runner-up is within a
    tiny relative margin is re-scored exactly over every point in that ball, so
    results match :class:`ExhaustiveIndex` bit for bit.
    """

    cloud: PointCloud
    leaf_size: int = DEFAULT_LEAF_SIZE
    workers: int = 1
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.cloud.require_points()
        if self.leaf_size < 1:
            raise ValueError("leaf_size must be a positive integer")
        self._tree = cKDTree(self.cloud.points, leafsize=self.leaf_size, balanced_tree=True)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        points = self.cloud.points
        n = points.shape[0]
        if q.shape[0] == 0:
            return np.empty(0, dtype=np.intp), np.empty(0)
        if n == 1:
            return np.zeros(q.shape[0], dtype=np.intp), squared_norms(points[0] - q)

        dist, idx = self._tree.query(q, k=2, workers=self.workers)
        indices = idx[:, 0].astype(np.intp)
        best = squared_norms(points[indices] - q)
        ambiguous = dist[:, 1] <= dist[:, 0] * (1.0 + _TIE_MARGIN) + 1e-300
        for row in np.flatnonzero(ambiguous):
            radius = math.sqrt(best[row]) * (1.0 + _TIE_MARGIN) + 1e-12
            candidates = np.sort(np.asarray(self._tree.query_ball_point(q[row], radius), dtype=np.intp))
            sq = squared_norms(points[candidates] - q[row])
            pick = int(np.argmin(sq))
            indices[row] = candidates[pick]
            best[row] = sq[pick]
        return indices, best


def build_index(
    cloud: PointCloud, leaf_size: int = DEFAULT_LEAF_SIZE, workers: int = 1
) -> SpatialIndex:
    """k-d tree over ``cloud``; raises :class:`EmptyCloud` for an empty cloud."""
    if len(cloud) == 0:
        raise EmptyCloud("cannot index an empty cloud")
    return SpatialIndex(cloud, leaf_size=leaf_size, workers=workers)


def nearest(index: NearestIndex, query: Point) -> tuple[int, float]:
    """Closest destination point to ``query`` as (index, squared distance)."""
    indices, sq = index.query(np.asarray(query, dtype=np.float64).reshape(1, 3))
    return int(indices[0]), float(sq[0])


def match(
    source: PointCloud, index: NearestIndex, policy: Optional[RejectionPolicy] = None
) -> CorrespondenceSet:
    """One nearest-neighbour candidate per source point, filtered by ``policy``."""
    if len(source) == 0:
        raise EmptyCloud("cannot match an empty source cloud")
    policy = policy or RejectionPolicy.none()
    dest_idx, sq = index.query(source.points)
    keep = policy.keep_mask(sq)
    if not np.any(keep):
        raise NoCorrespondences(
            f"rejection policy removed all {len(source)} candidate pairs "
            f"(closest candidate at {math.sqrt(float(np.min(sq))):.6g} m)"
        )
    src_idx = np.arange(len(source), dtype=np.intp)
    logger.debug("matched %d of %d source points", int(np.count_nonzero(keep)), len(source))
    return CorrespondenceSet(src_idx[keep], dest_idx[keep], sq[keep])
