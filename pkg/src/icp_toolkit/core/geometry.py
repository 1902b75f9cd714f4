"""Point clouds, rigid transforms and the elementary operators of ICP.

Everything is three-dimensional and double precision. Planar data lives at z = 0
with rotations about z. Clouds and transforms are immutable: constructors copy
their inputs and mark the arrays read-only.
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
import numpy.typing as npt

from .errors import EmptyCloud, InvalidCloud, InvalidTransform

Point = npt.NDArray[np.float64]
ArrayLike = Union[npt.ArrayLike, Sequence[Sequence[float]]]

NORMAL_TOLERANCE = 1e-9
ROTATION_TOLERANCE = 1e-9
PLANAR_TOLERANCE = 1e-9


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


def squared_norms(diff: np.ndarray) -> np.ndarray:
    """Row-wise squared Euclidean norm of an (n, 3) array.

    Written out per component so every row's result is bit-identical no matter
    how many rows are evaluated together.
    """
    return diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ordered set of 3D points with optional unit normals and weights."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        points = np.array(self.points, dtype=np.float64, copy=True)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise InvalidCloud(f"points must have shape (n, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise InvalidCloud("points contain NaN or infinite coordinates")
        object.__setattr__(self, "points", _frozen(points))

        if self.normals is not None:
            normals = np.array(self.normals, dtype=np.float64, copy=True).reshape(-1, 3)
            if normals.shape != points.shape:
                raise InvalidCloud(
                    f"normals shape {normals.shape} does not match points {points.shape}"
                )
            if not np.all(np.isfinite(normals)):
                raise InvalidCloud("normals contain NaN or infinite values")
            lengths = np.sqrt(squared_norms(normals))
            if normals.shape[0] and np.max(np.abs(lengths - 1.0)) > NORMAL_TOLERANCE:
                raise InvalidCloud("normals must have unit length")
            object.__setattr__(self, "normals", _frozen(normals))

        if self.weights is not None:
            weights = np.array(self.weights, dtype=np.float64, copy=True).reshape(-1)
            if weights.shape[0] != points.shape[0]:
                raise InvalidCloud(
                    f"{weights.shape[0]} weights given for {points.shape[0]} points"
                )
            if not np.all(np.isfinite(weights)) or np.any(weights < 0):
                raise InvalidCloud("weights must be finite and non-negative")
            if weights.shape[0] and not np.any(weights > 0):
                raise InvalidCloud("at least one weight must be positive")
            object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def from_points(
        cls,
        points: ArrayLike,
        normals: Optional[ArrayLike] = None,
        weights: Optional[ArrayLike] = None,
    ) -> "PointCloud":
        return cls(np.asarray(points, dtype=np.float64), normals, weights)  # type: ignore[arg-type]

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def has_weights(self) -> bool:
        return self.weights is not None

    def with_normals(self, normals: Optional[ArrayLike]) -> "PointCloud":
        return PointCloud(self.points, normals, self.weights)  # type: ignore[arg-type]

    def with_weights(self, weights: Optional[ArrayLike]) -> "PointCloud":
        return PointCloud(self.points, self.normals, weights)  # type: ignore[arg-type]

    def subset(self, indices: npt.ArrayLike) -> "PointCloud":
        """Copy of the cloud restricted to ``indices`` (in the given order)."""
        idx = np.asarray(indices, dtype=np.intp)
        return PointCloud(
            self.points[idx],
            None if self.normals is None else self.normals[idx],
            None if self.weights is None else self.weights[idx],
        )

    def is_planar(self, tolerance: float = PLANAR_TOLERANCE) -> bool:
        """True when every point lies on z = 0 within ``tolerance``."""
        return bool(np.all(np.abs(self.points[:, 2]) <= tolerance))

    def require_points(self) -> None:
        if len(self) == 0:
            raise EmptyCloud("point cloud has no points")


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """A proper rigid motion ``p -> R p + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        rotation = np.array(self.rotation, dtype=np.float64, copy=True)
        translation = np.array(self.translation, dtype=np.float64, copy=True).reshape(-1)
        if rotation.shape != (3, 3):
            raise InvalidTransform(f"rotation must be 3x3, got {rotation.shape}")
        if translation.shape != (3,):
            raise InvalidTransform(f"translation must have 3 entries, got {translation.shape}")
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise InvalidTransform("transform contains NaN or infinite values")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ROTATION_TOLERANCE:
            raise InvalidTransform("rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOLERANCE:
            raise InvalidTransform("rotation is a reflection (det != +1)")
        object.__setattr__(self, "rotation", _frozen(rotation))
        object.__setattr__(self, "translation", _frozen(translation))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, translation: npt.ArrayLike) -> "RigidTransform":
        return cls(np.eye(3), np.asarray(translation, dtype=np.float64))

    @classmethod
    def about_z(
        cls, angle: float, translation: npt.ArrayLike = (0.0, 0.0, 0.0)
    ) -> "RigidTransform":
        return cls(rotation_z(angle), np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_planar_pose(cls, x: float, y: float, theta: float) -> "RigidTransform":
        return cls(rotation_z(theta), np.array([x, y, 0.0]))

    @classmethod
    def from_matrix(cls, matrix: npt.ArrayLike) -> "RigidTransform":
        m = np.asarray(matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidTransform(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def to_planar_pose(self) -> tuple[float, float, float]:
        """(x, y, heading) of a transform that rotates about z."""
        theta = math.atan2(self.rotation[1, 0], self.rotation[0, 0])
        return float(self.translation[0]), float(self.translation[1]), theta

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


def rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def centroid(cloud: PointCloud) -> Point:
    """Operator M: the (weighted) center of mass of a cloud."""
    cloud.require_points()
    if cloud.weights is None:
        return np.mean(cloud.points, axis=0)
    return np.average(cloud.points, axis=0, weights=cloud.weights)


def apply(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Operator T_{R,t}: map every point and normal of ``cloud``."""
    points = cloud.points @ transform.rotation.T + transform.translation
    normals = None if cloud.normals is None else cloud.normals @ transform.rotation.T
    return PointCloud(points, normals, cloud.weights)


def apply_points(transform: RigidTransform, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64) @ transform.rotation.T + transform.translation


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Transform equal to applying ``b`` first, then ``a``."""
    return RigidTransform(
        a.rotation @ b.rotation, a.rotation @ b.translation + a.translation
    )


def invert(transform: RigidTransform) -> RigidTransform:
    rt = transform.rotation.T
    return RigidTransform(rt, -(rt @ transform.translation))


def rotation_angle(rotation: np.ndarray) -> float:
    """Angle in [0, pi] of a rotation matrix.

    atan2 of the axis magnitude against ``trace - 1`` equals
    ``arccos((trace - 1) / 2)`` and keeps full precision near zero.
    """
    axis = np.array(
        [
            rotation[2, 1] - rotation[1, 2],
            rotation[0, 2] - rotation[2, 0],
            rotation[1, 0] - rotation[0, 1],
        ]
    )
    return float(math.atan2(float(np.linalg.norm(axis)), float(np.trace(rotation)) - 1.0))


def transform_distance(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(angle in radians, shift in metres) between two transforms."""
    angle = rotation_angle(a.rotation.T @ b.rotation)
    shift = float(np.linalg.norm(a.translation - b.translation))
    return angle, shift


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped == -math.pi else wrapped
