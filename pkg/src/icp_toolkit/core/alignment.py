"""Closed-form and linearized rigid alignment for known correspondences.

Three error metrics are supported:

* point-to-point: weighted Kabsch/Umeyama via SVD, with reflection correction;
* point-to-plane: one Gauss step on the small-angle linearization, 6x6 normal
  equations, projected back onto the nearest proper rotation;
* point-to-line (planar): one Gauss step in (theta, tx, ty), 3x3 normal equations.

Pair weights are ``w_src[i] * w_dst[j]`` and multiply squared residuals.
"""

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .correspondence import CorrespondenceSet
from .errors import DegenerateGeometry, MetricUnavailable, TooFewPairs, TooFewPoints
from .geometry import PointCloud, RigidTransform, rotation_z

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
DEFAULT_LINE_TOLERANCE = 1e-6


class MetricKind(str, enum.Enum):
    POINT_TO_POINT = "p2p"
    POINT_TO_PLANE = "p2plane"
    POINT_TO_LINE = "p2l"


@dataclass(frozen=True, eq=False)
class LineField:
    """Local 2D line model at every destination point.

    ``directions`` are unit (dx, dy) vectors. ``valid`` is False where the
    neighbourhood is not collinear. ``lower``/``upper`` bound the along-line
    offset, relative to the point, covered by the neighbourhood.
    """

    directions: np.ndarray
    valid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @classmethod
    def from_directions(cls, directions: np.ndarray) -> "LineField":
        """Every line valid and unbounded along its direction."""
        d = np.asarray(directions, dtype=np.float64)[:, :2]
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        n = d.shape[0]
        return cls(d, np.ones(n, dtype=bool), np.full(n, -np.inf), np.full(n, np.inf))

    @property
    def normals(self) -> np.ndarray:
        return np.column_stack([-self.directions[:, 1], self.directions[:, 0]])


def _pair_weights(
    source: PointCloud, dest: PointCloud, corr: CorrespondenceSet
) -> Optional[np.ndarray]:
    if source.weights is None and dest.weights is None:
        return None
    w = np.ones(len(corr))
    if source.weights is not None:
        w = w * source.weights[corr.source_indices]
    if dest.weights is not None:
        w = w * dest.weights[corr.dest_indices]
    if not np.any(w > 0):
        raise DegenerateGeometry("every matched pair has zero weight")
    return w


def _matched(
    source: PointCloud, dest: PointCloud, corr: CorrespondenceSet, minimum: int
) -> tuple[np.ndarray, np.ndarray, Optional[np.ndarray]]:
    if len(corr) < minimum:
        raise TooFewPairs(f"need at least {minimum} correspondences, got {len(corr)}")
    src = source.points[corr.source_indices]
    dst = dest.points[corr.dest_indices]
    return src, dst, _pair_weights(source, dest, corr)


def _nearest_rotation(matrix: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(matrix)
    d = 1.0 if np.linalg.det(u @ vt) >= 0 else -1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def _skew(w: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def _null_directions(matrix: np.ndarray) -> np.ndarray:
    """Rows spanning the ill-conditioned directions of a symmetric PSD matrix."""
    values, vectors = np.linalg.eigh(matrix)
    top = values[-1]
    weak = values <= top / CONDITION_LIMIT if top > 0 else np.ones_like(values, dtype=bool)
    return vectors[:, weak].T


def _is_ill_conditioned(matrix: np.ndarray) -> bool:
    sv = np.linalg.svd(matrix, compute_uv=False)
    return bool(sv[0] <= 0.0 or sv[-1] * CONDITION_LIMIT < sv[0])


def _normal_equations(
    a: np.ndarray, b: np.ndarray, w: Optional[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    if w is None:
        return a.T @ a, a.T @ b
    return a.T @ (a * w[:, None]), a.T @ (w * b)


def solve_point_to_point(
    source: PointCloud, dest: PointCloud, corr: CorrespondenceSet
) -> RigidTransform:
    """Weighted least-squares rigid motion taking matched source points onto dest."""
    src, dst, w = _matched(source, dest, corr, minimum=3)
    if w is None:
        cs, cd = src.mean(axis=0), dst.mean(axis=0)
        a, b = src - cs, dst - cd
        scatter, cross = a.T @ a, a.T @ b
    else:
        cs = np.average(src, axis=0, weights=w)
        cd = np.average(dst, axis=0, weights=w)
        a, b = src - cs, dst - cd
        scatter, cross = a.T @ (a * w[:, None]), (a * w[:, None]).T @ b

    spread = np.linalg.eigvalsh(scatter)
    if spread[-1] <= 0.0 or spread[-2] * CONDITION_LIMIT <= spread[-1]:
        raise DegenerateGeometry("matched source points are coincident or collinear")

    u, _, vt = np.linalg.svd(cross)
    v = vt.T
    d = 1.0 if np.linalg.det(v @ u.T) >= 0 else -1.0
    rotation = v @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rotation, cd - rotation @ cs)


def solve_point_to_plane(
    source: PointCloud, dest: PointCloud, corr: CorrespondenceSet
) -> RigidTransform:
    """One linearized step minimizing squared distances to destination tangent planes."""
    if dest.normals is None:
        raise MetricUnavailable("point-to-plane needs destination normals")
    src, dst, w = _matched(source, dest, corr, minimum=6)
    normals = dest.normals[corr.dest_indices]
    a = np.hstack([np.cross(src, normals), normals])
    b = np.einsum("ij,ij->i", normals, dst - src)
    lhs, rhs = _normal_equations(a, b, w)
    if _is_ill_conditioned(lhs):
        raise DegenerateGeometry(
            "point-to-plane system is rank deficient", unconstrained=_null_directions(lhs)
        )
    x = np.linalg.solve(lhs, rhs)
    rotation = _nearest_rotation(np.eye(3) + _skew(x[:3]))
    return RigidTransform(rotation, x[3:])


def _require_planar(*clouds: PointCloud) -> None:
    for cloud in clouds:
        if not cloud.is_planar():
            raise MetricUnavailable("point-to-line needs planar clouds (z = 0)")


def _line_system(
    source: PointCloud,
    dest: PointCloud,
    corr: CorrespondenceSet,
    dest_lines: LineField,
) -> tuple[np.ndarray, np.ndarray]:
    _require_planar(source, dest)
    usable = corr.subset(dest_lines.valid[corr.dest_indices])
    src, dst, w = _matched(source, dest, usable, minimum=3)
    m = dest_lines.normals[usable.dest_indices]
    a = np.column_stack(
        [m[:, 0] * -src[:, 1] + m[:, 1] * src[:, 0], m[:, 0], m[:, 1]]
    )
    b = m[:, 0] * (dst[:, 0] - src[:, 0]) + m[:, 1] * (dst[:, 1] - src[:, 1])
    return _normal_equations(a, b, w)


def line_nullspace(
    source: PointCloud,
    dest: PointCloud,
    corr: CorrespondenceSet,
    dest_lines: LineField,
) -> np.ndarray:
    """(theta, tx, ty) directions the point-to-line system leaves unconstrained."""
    lhs, _ = _line_system(source, dest, corr, dest_lines)
    if not _is_ill_conditioned(lhs):
        return np.empty((0, 3))
    return _null_directions(lhs)


def solve_point_to_line_2d(
    source: PointCloud,
    dest: PointCloud,
    corr: CorrespondenceSet,
    dest_lines: LineField,
    allow_partial: bool = False,
) -> RigidTransform:
    """One linearized step minimizing squared distances to destination lines.

    With ``allow_partial`` a rank-deficient system yields the minimum-norm step:
    the unconstrained directions (see :func:`line_nullspace`) stay at zero.
    """
    lhs, rhs = _line_system(source, dest, corr, dest_lines)
    if _is_ill_conditioned(lhs):
        null = _null_directions(lhs)
        values, vectors = np.linalg.eigh(lhs)
        if not allow_partial or values[-1] <= 0.0:
            raise DegenerateGeometry(
                "point-to-line system is rank deficient", unconstrained=null
            )
        logger.warning("point-to-line step leaves %d direction(s) unconstrained: %s", len(null), null)
        keep = values > values[-1] / CONDITION_LIMIT
        x = vectors[:, keep] @ ((vectors[:, keep].T @ rhs) / values[keep])
    else:
        x = np.linalg.solve(lhs, rhs)
    return RigidTransform(rotation_z(float(x[0])), np.array([x[1], x[2], 0.0]))


def estimate_normals(
    cloud: PointCloud, k: int = 10, viewpoint: Optional[np.ndarray] = None
) -> PointCloud:
    """Copy of ``cloud`` with PCA normals from ``k`` nearest neighbours.

    Each normal is oriented toward ``viewpoint`` (default: the origin).
    """
    n = len(cloud)
    if k < 3 or n < k:
        raise TooFewPoints(f"need 3 <= k <= {n} neighbours, got k={k}")
    points = cloud.points
    view = np.zeros(3) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64)
    _, neighbours = cKDTree(points).query(points, k=k)
    patch = points[neighbours]
    centered = patch - patch.mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vectors = np.linalg.eigh(covariance)
    normals = vectors[:, :, 0].copy()
    away = np.einsum("ij,ij->i", normals, view - points) < 0
    normals[away] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.with_normals(normals)


def estimate_lines_2d(
    cloud: PointCloud, k: int = 3, tolerance: float = DEFAULT_LINE_TOLERANCE
) -> LineField:
    """Line direction at each point of a planar cloud from its ``k`` nearest neighbours.

    A line is valid when every neighbour lies within ``tolerance`` metres of the
    fitted line and the neighbourhood has non-zero extent.
    """
    n = len(cloud)
    if k < 2 or n < k:
        raise TooFewPoints(f"need 2 <= k <= {n} neighbours, got k={k}")
    xy = cloud.points[:, :2]
    _, neighbours = cKDTree(xy).query(xy, k=k)
    patch = xy[neighbours]
    centered = patch - patch.mean(axis=1, keepdims=True)
    covariance = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vectors = np.linalg.eigh(covariance)
    directions = vectors[:, :, 1].copy()
    flip = (directions[:, 0] < 0) | ((directions[:, 0] == 0) & (directions[:, 1] < 0))
    directions[flip] *= -1.0
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    normals = np.column_stack([-directions[:, 1], directions[:, 0]])

    deviation = np.abs(np.einsum("nkd,nd->nk", centered, normals)).max(axis=1)
    along = np.einsum("nkd,nd->nk", patch - xy[:, None, :], directions)
    lower, upper = along.min(axis=1), along.max(axis=1)
    valid = (deviation <= tolerance) & (upper > lower)
    return LineField(directions, valid, lower, upper)


def filter_line_pairs(
    source: PointCloud, dest: PointCloud, corr: CorrespondenceSet, dest_lines: LineField
) -> CorrespondenceSet:
    """Drop pairs without a valid destination line or projecting off its extent."""
    src = source.points[corr.source_indices, :2]
    dst = dest.points[corr.dest_indices, :2]
    j = corr.dest_indices
    direction = dest_lines.directions[j]
    along = (src[:, 0] - dst[:, 0]) * direction[:, 0] + (src[:, 1] - dst[:, 1]) * direction[:, 1]
    keep = (
        dest_lines.valid[j]
        & (along >= dest_lines.lower[j] - 1e-12)
        & (along <= dest_lines.upper[j] + 1e-12)
    )
    return corr.subset(keep)


def solve(
    metric: MetricKind,
    source: PointCloud,
    dest: PointCloud,
    corr: CorrespondenceSet,
    dest_lines: Optional[LineField] = None,
) -> RigidTransform:
    """Dispatch to the solver for ``metric``."""
    if metric is MetricKind.POINT_TO_POINT:
        return solve_point_to_point(source, dest, corr)
    if metric is MetricKind.POINT_TO_PLANE:
        return solve_point_to_plane(source, dest, corr)
    if dest_lines is None:
        raise MetricUnavailable("point-to-line needs destination line directions")
    return solve_point_to_line_2d(source, dest, corr, dest_lines, allow_partial=True)
