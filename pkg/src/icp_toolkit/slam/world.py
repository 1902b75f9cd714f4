"""Planar worlds, trajectories and a simulated 2D range sensor."""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core.errors import FixtureError
from ..core.geometry import PointCloud, RigidTransform, compose, invert, wrap_angle

Pose = tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class World:
    """Wall segments ``[x1, y1, x2, y2]`` and landmarks ``[x, y, confidence]``."""

    walls: np.ndarray
    landmarks: np.ndarray

    def __post_init__(self) -> None:
        walls = np.array(self.walls, dtype=np.float64, copy=True).reshape(-1, 4)
        landmarks = np.array(self.landmarks, dtype=np.float64, copy=True).reshape(-1, 3)
        if walls.shape[0] == 0:
            raise FixtureError("a world needs at least one wall")
        if not (np.all(np.isfinite(walls)) and np.all(np.isfinite(landmarks))):
            raise FixtureError("world coordinates must be finite")
        if np.any(np.hypot(walls[:, 2] - walls[:, 0], walls[:, 3] - walls[:, 1]) == 0):
            raise FixtureError("wall segments must have non-zero length")
        if landmarks.shape[0] and np.any(landmarks[:, 2] <= 1.0):
            raise FixtureError("landmark confidence must exceed 1")
        walls.flags.writeable = False
        landmarks.flags.writeable = False
        object.__setattr__(self, "walls", walls)
        object.__setattr__(self, "landmarks", landmarks)

    @classmethod
    def rectangle(
        cls,
        width: float,
        height: float,
        origin: tuple[float, float] = (0.0, 0.0),
        landmarks: Sequence[Sequence[float]] = (),
    ) -> "World":
        x0, y0 = origin
        x1, y1 = x0 + width, y0 + height
        walls = [[x0, y0, x1, y0], [x1, y0, x1, y1], [x1, y1, x0, y1], [x0, y1, x0, y0]]
        return cls(np.array(walls), np.array(landmarks, dtype=np.float64).reshape(-1, 3))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One planar pose (x, y, heading) per frame."""

    poses: np.ndarray

    def __post_init__(self) -> None:
        poses = np.array(self.poses, dtype=np.float64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(poses)):
            raise FixtureError("trajectory poses must be finite")
        poses.flags.writeable = False
        object.__setattr__(self, "poses", poses)

    def __len__(self) -> int:
        return int(self.poses.shape[0])

    def __getitem__(self, index: int) -> Pose:
        x, y, theta = self.poses[index]
        return float(x), float(y), float(theta)

    @property
    def positions(self) -> np.ndarray:
        return self.poses[:, :2]

    def transform(self, index: int) -> RigidTransform:
        return RigidTransform.from_planar_pose(*self[index])

    def relative(self, i: int, j: int) -> RigidTransform:
        """Transform taking frame ``j`` sensor coordinates into frame ``i``."""
        return compose(invert(self.transform(i)), self.transform(j))

    def prefix(self, count: int) -> "Trajectory":
        return Trajectory(self.poses[:count])

    def validate_steps(self, max_translation: float, max_rotation: float) -> None:
        """Raise if any consecutive motion exceeds the bounds."""
        if len(self) < 2:
            return
        steps = np.diff(self.poses, axis=0)
        shift = np.hypot(steps[:, 0], steps[:, 1])
        turn = np.abs([wrap_angle(float(a)) for a in steps[:, 2]])
        bad = np.flatnonzero((shift > max_translation) | (turn > max_rotation))
        if bad.size:
            k = int(bad[0])
            raise FixtureError(
                f"motion between frames {k} and {k + 1} exceeds the step bound "
                f"({shift[k]:.3f} m, {turn[k]:.3f} rad)"
            )


@dataclass(frozen=True)
class SensorConfig:
    n_beams: int = 360
    fov: float = 2.0 * math.pi
    max_range: float = 20.0
    noise_sigma: float = 0.0
    seed: int = 0
    capture_radius: float = 0.1

    def __post_init__(self) -> None:
        if self.n_beams < 1:
            raise ValueError("n_beams must be positive")
        if not 0.0 < self.fov <= 2.0 * math.pi:
            raise ValueError("fov must lie in (0, 2*pi]")
        if self.max_range <= 0 or self.noise_sigma < 0 or self.capture_radius < 0:
            raise ValueError("max_range must be positive; noise and capture radius non-negative")

    def bearings(self) -> np.ndarray:
        """Strictly increasing beam bearings; a full sweep includes bearing 0 exactly."""
        n = self.n_beams
        if self.fov >= 2.0 * math.pi:
            return (np.arange(n) - n // 2) * (2.0 * math.pi / n)
        if n == 1:
            return np.zeros(1)
        return np.linspace(-self.fov / 2.0, self.fov / 2.0, n)


@dataclass(frozen=True, eq=False)
class Scan:
    """One sweep: bearings and ranges, hit flags, landmark confidences (0 when none)."""

    bearings: np.ndarray
    ranges: np.ndarray
    hits: np.ndarray
    landmark: np.ndarray

    def __post_init__(self) -> None:
        if self.bearings.size > 1 and np.any(np.diff(self.bearings) <= 0):
            raise ValueError("bearings must be strictly increasing")

    @property
    def landmark_flags(self) -> np.ndarray:
        return self.landmark > 0


def _cross(ax: np.ndarray, ay: np.ndarray, bx: np.ndarray, by: np.ndarray) -> np.ndarray:
    return ax * by - ay * bx


def simulate_scan(world: World, pose: Pose, sensor: SensorConfig, frame: int = 0) -> Scan:
    """Cast every beam against every wall; the nearest hit wins.

    Range noise is Gaussian, drawn from ``default_rng([sensor.seed, frame])``,
    and clamped to ``(0, max_range]``. Beams without a hit report ``max_range``
    with the hit flag cleared.
    """
    x, y, theta = pose
    bearings = sensor.bearings()
    angles = theta + bearings
    ux, uy = np.cos(angles)[:, None], np.sin(angles)[:, None]

    ax, ay = world.walls[:, 0][None, :], world.walls[:, 1][None, :]
    ex, ey = (world.walls[:, 2] - world.walls[:, 0])[None, :], (world.walls[:, 3] - world.walls[:, 1])[None, :]
    wx, wy = ax - x, ay - y
    denom = _cross(ux, uy, ex, ey)
    parallel = np.abs(denom) < 1e-12
    safe = np.where(parallel, 1.0, denom)
    r = _cross(wx, wy, ex, ey) / safe
    s = _cross(wx, wy, ux, uy) / safe
    valid = ~parallel & (r > 1e-12) & (s >= 0.0) & (s <= 1.0)
    r = np.where(valid, r, np.inf)
    ranges = r.min(axis=1)

    if sensor.noise_sigma > 0:
        rng = np.random.default_rng([sensor.seed, frame])
        noise = rng.normal(0.0, sensor.noise_sigma, size=ranges.shape[0])
        ranges = np.where(np.isfinite(ranges), ranges + noise, ranges)

    hits = np.isfinite(ranges) & (ranges <= sensor.max_range)
    ranges = np.where(hits, np.clip(ranges, np.finfo(float).tiny, sensor.max_range), sensor.max_range)

    landmark = np.zeros(ranges.shape[0])
    if world.landmarks.shape[0] and np.any(hits):
        px = x + ranges * np.cos(angles)
        py = y + ranges * np.sin(angles)
        dx = px[:, None] - world.landmarks[:, 0][None, :]
        dy = py[:, None] - world.landmarks[:, 1][None, :]
        dist = np.hypot(dx, dy)
        closest = np.argmin(dist, axis=1)
        captured = hits & (dist[np.arange(dist.shape[0]), closest] <= sensor.capture_radius)
        landmark[captured] = world.landmarks[closest[captured], 2]

    return Scan(bearings, ranges, hits, landmark)


def scan_to_cloud(scan: Scan, pose_hint: Optional[Pose] = None) -> PointCloud:
    """Hit returns as z = 0 points in the hint frame; landmark returns weighted by confidence."""
    hx, hy, htheta = pose_hint or (0.0, 0.0, 0.0)
    keep = scan.hits
    angles = htheta + scan.bearings[keep]
    r = scan.ranges[keep]
    points = np.column_stack([hx + r * np.cos(angles), hy + r * np.sin(angles), np.zeros(r.shape[0])])
    confidence = scan.landmark[keep]
    weights = np.where(confidence > 0, confidence, 1.0) if np.any(confidence > 0) else None
    return PointCloud(points, None, weights)
