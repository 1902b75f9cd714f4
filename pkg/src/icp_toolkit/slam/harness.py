"""Synthetic 2D scan-matching SLAM: sensor input, pose estimation, loop closure.

Online mode processes frames strictly in order. Each frame is registered onto
the previous one, and revisits of earlier keyframes trigger a verified loop
closure whose residual is spread linearly over the intervening frames. Offline
mode runs the online pass, then one refinement pass that re-registers every
keyframe under a tighter distance cap, against the anchor keyframes where the
fit allows and otherwise against its neighbours and loop-closure partners.
"""

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..core.alignment import MetricKind
from ..core.correspondence import RejectionPolicy
from ..core.errors import IcpFailure, TooFewPairs, TooFewPoints
from ..core.geometry import PointCloud, RigidTransform, apply, compose, invert, wrap_angle
from ..core.icp import IcpConfig, IcpResult, Termination, run_icp
from .world import Pose, SensorConfig, Trajectory, World, scan_to_cloud, simulate_scan

logger = logging.getLogger(__name__)


# Noisy scans: a line fit is accepted while every neighbour lies within this many sigmas.
LINE_NOISE_FACTOR = 4.0
NOISY_LINE_NEIGHBORS = 8
# Closure verification and refinement accept a fit up to this multiple of theta0.
CLOSURE_GATE_FACTOR = 4.0


class MatchMode(str, enum.Enum):
    LANDMARK = "landmark"
    NON_LANDMARK = "nonlandmark"


class PipelineMode(str, enum.Enum):
    ONLINE = "online"
    OFFLINE = "offline"


@dataclass(frozen=True)
class SlamConfig:
    """Harness parameters. Distances in metres, angles in radians.

    ``rejection`` replaces the registration's own policy for every match the
    harness runs; when unset, pairs farther apart than ``max_step_translation``
    are dropped. A registration whose final pairs cover less than
    ``min_overlap`` of the source scan counts as failed. The refinement pass
    scales the distance cap by ``offline_rejection_scale``.
    """

    mode: MatchMode = MatchMode.LANDMARK
    pipeline: PipelineMode = PipelineMode.ONLINE
    loop_closure: bool = True
    keyframe_translation: float = 0.2
    keyframe_rotation: float = 0.1
    closure_radius: float = 0.5
    closure_min_separation: int = 10
    offline_rejection_scale: float = 0.5
    refinement_window: int = 2
    metric_override: Optional[MetricKind] = None
    max_step_translation: float = 1.0
    max_step_rotation: float = math.pi / 4
    rejection: Optional[RejectionPolicy] = None
    min_overlap: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.offline_rejection_scale <= 1.0:
            raise ValueError("offline_rejection_scale must lie in (0, 1]")
        if not 0.0 <= self.min_overlap <= 1.0:
            raise ValueError("min_overlap must lie in [0, 1]")
        if self.refinement_window < 1:
            raise ValueError("refinement_window must be at least 1")

    @property
    def metric(self) -> MetricKind:
        if self.metric_override is not None:
            return self.metric_override
        if self.mode is MatchMode.LANDMARK:
            return MetricKind.POINT_TO_POINT
        return MetricKind.POINT_TO_LINE

    @property
    def matching_rejection(self) -> RejectionPolicy:
        if self.rejection is not None:
            return self.rejection
        return RejectionPolicy.absolute(self.max_step_translation)


def matching_config(icp_config: IcpConfig, slam_config: SlamConfig, sensor: SensorConfig) -> IcpConfig:
    """The registration settings the harness actually runs with.

    Consecutive scans are already close, so the centroid shift is off and the
    rejection comes from ``slam_config``. On noisy point-to-line data the line
    tolerance widens with the range noise and more neighbours enter each fit.
    """
    config = replace(
        icp_config,
        metric=slam_config.metric,
        align_centroids_first=False,
        initial=None,
        rejection=slam_config.matching_rejection,
    )
    if config.metric is MetricKind.POINT_TO_LINE and sensor.noise_sigma > 0:
        config = replace(
            config,
            line_tolerance=max(config.line_tolerance, LINE_NOISE_FACTOR * sensor.noise_sigma),
            line_neighbors=max(config.line_neighbors, NOISY_LINE_NEIGHBORS),
        )
    return config


def _tightened(policy: RejectionPolicy, scale: float) -> RejectionPolicy:
    """Scale the distance caps of ``policy`` down for the refinement pass."""
    return replace(
        policy,
        max_distance=None if policy.max_distance is None else policy.max_distance * scale,
        median_factor=None if policy.median_factor is None else policy.median_factor * scale,
    )


@dataclass
class FrameDiagnostics:
    frame: int
    iterations: int = 0
    error: Optional[float] = None
    termination: Optional[str] = None
    latency_ms: float = 0.0
    failure: Optional[str] = None
    refined_error: Optional[float] = None

    def to_dict(self) -> dict[str, object]:
        data: dict[str, object] = {"frame": self.frame, "iterations": self.iterations, "latency_ms": self.latency_ms}
        for key in ("error", "termination", "failure", "refined_error"):
            value = getattr(self, key)
            if value is not None:
                data[key] = value
        return data


@dataclass(frozen=True)
class LoopClosure:
    """An accepted revisit: ``relative`` is the verified pose of ``frame`` in ``keyframe``'s frame."""

    frame: int
    keyframe: int
    error: float
    correction: tuple[float, float, float]
    relative: tuple[float, float, float]

    def to_dict(self) -> dict[str, object]:
        return {
            "frame": self.frame,
            "keyframe": self.keyframe,
            "error": self.error,
            "correction": list(self.correction),
            "relative": list(self.relative),
        }


@dataclass(frozen=True, eq=False)
class SlamReport:
    estimated: Trajectory
    ground_truth: Trajectory
    frame_estimates: Trajectory
    ate: float
    frames: list[FrameDiagnostics]
    loop_closures: list[LoopClosure]
    keyframes: list[int]
    passes: int
    mode: PipelineMode = PipelineMode.ONLINE
    match: MatchMode = MatchMode.LANDMARK

    def __post_init__(self) -> None:
        if len(self.estimated) != len(self.ground_truth):
            raise ValueError("estimated and ground-truth trajectories differ in length")

    def to_dict(self) -> dict[str, object]:
        return {
            "mode": self.mode.value,
            "match": self.match.value,
            "passes": self.passes,
            "ate": self.ate,
            "estimated": self.estimated.poses.tolist(),
            "frame_estimates": self.frame_estimates.poses.tolist(),
            "ground_truth": self.ground_truth.poses.tolist(),
            "keyframes": list(self.keyframes),
            "loop_closures": [c.to_dict() for c in self.loop_closures],
            "frames": [f.to_dict() for f in self.frames],
        }


def absolute_trajectory_error(estimated: Trajectory, truth: Trajectory) -> float:
    """RMSE between estimated and ground-truth positions, in metres."""
    if len(estimated) != len(truth):
        raise ValueError("trajectories must have equal length")
    diff = estimated.positions - truth.positions
    return float(np.sqrt(np.mean(diff[:, 0] ** 2 + diff[:, 1] ** 2)))


def _to_transform(pose: np.ndarray) -> RigidTransform:
    return RigidTransform.from_planar_pose(float(pose[0]), float(pose[1]), float(pose[2]))


def _to_pose(transform: RigidTransform) -> np.ndarray:
    return np.array(transform.to_planar_pose())


def _planar(transform: RigidTransform) -> RigidTransform:
    """Drop numerical out-of-plane residue from a registration result."""
    return _to_transform(_to_pose(transform))


def _pose_difference(target: np.ndarray, current: np.ndarray) -> np.ndarray:
    delta = target - current
    delta[2] = wrap_angle(float(delta[2]))
    return delta


@dataclass
class _PassState:
    poses: np.ndarray
    emitted: np.ndarray
    frames: list[FrameDiagnostics] = field(default_factory=list)
    keyframes: list[int] = field(default_factory=list)
    closures: list[LoopClosure] = field(default_factory=list)


class ScanMatchingPipeline:
    """The stages of a scan-matching SLAM front end over a simulated world."""

    def __init__(
        self,
        world: World,
        sensor: SensorConfig,
        icp_config: IcpConfig,
        slam_config: SlamConfig,
    ) -> None:
        self.world = world
        self.sensor = sensor
        self.slam_config = slam_config
        self.icp_config = matching_config(icp_config, slam_config, sensor)
        self.clouds: list[PointCloud] = []

    # Sensor input
    def sense(self, pose: Pose, frame: int) -> PointCloud:
        cloud = scan_to_cloud(simulate_scan(self.world, pose, self.sensor, frame))
        if self.slam_config.mode is MatchMode.NON_LANDMARK:
            cloud = cloud.with_weights(None)
        return cloud

    # Feature match: not modelled, clouds pass through unchanged
    def match_features(self, cloud: PointCloud) -> PointCloud:
        return cloud

    # Pose estimation
    def register(
        self, source: int, dest: int, initial: RigidTransform, config: Optional[IcpConfig] = None
    ) -> IcpResult:
        config = replace(config or self.icp_config, initial=initial)
        return self._checked(run_icp(self.clouds[source], self.clouds[dest], config), len(self.clouds[source]))

    def _checked(self, result: IcpResult, source_size: int) -> IcpResult:
        """Fail a registration that ended without pairs or matched too little of the scan."""
        result.raise_for_termination()
        overlap = len(result.final_correspondences) / source_size
        if overlap < self.slam_config.min_overlap:
            raise TooFewPairs(
                f"final pairs cover {overlap:.0%} of the scan, below {self.slam_config.min_overlap:.0%}"
            )
        return result

    def _verified(self, result: IcpResult) -> bool:
        """A fit good enough to anchor a pose: converged and within the gate."""
        return (
            result.termination is Termination.CONVERGED
            and result.final_error <= CLOSURE_GATE_FACTOR * self.icp_config.theta0
        )

    # Bundle adjustment: not modelled, the trajectory passes through unchanged
    def bundle_adjust(self, poses: np.ndarray) -> np.ndarray:
        return poses

    def _is_keyframe(self, pose: np.ndarray, last_keyframe: np.ndarray) -> bool:
        delta = _pose_difference(pose, last_keyframe)
        return bool(
            math.hypot(delta[0], delta[1]) > self.slam_config.keyframe_translation
            or abs(delta[2]) > self.slam_config.keyframe_rotation
        )

    def _closure_candidate(self, state: _PassState, frame: int) -> Optional[int]:
        cfg = self.slam_config
        position = state.poses[frame, :2]
        best: Optional[int] = None
        best_distance = math.inf
        for keyframe in state.keyframes:
            if frame - keyframe < cfg.closure_min_separation:
                continue
            distance = float(np.hypot(*(state.poses[keyframe, :2] - position)))
            if distance <= cfg.closure_radius and distance < best_distance:
                best, best_distance = keyframe, distance
        return best

    def _apply_closure(
        self, poses: np.ndarray, keyframe: int, frame: int, target: np.ndarray, frames: list[int]
    ) -> np.ndarray:
        """Spread ``target - poses[frame]`` linearly over ``frames`` in (keyframe, frame]."""
        correction = _pose_difference(target, poses[frame])
        for m in frames:
            if keyframe < m <= frame:
                poses[m] = poses[m] + correction * ((m - keyframe) / (frame - keyframe))
                poses[m, 2] = wrap_angle(float(poses[m, 2]))
        poses[frame] = target
        return correction

    def _try_closure(self, state: _PassState, frame: int) -> Optional[LoopClosure]:
        keyframe = self._closure_candidate(state, frame)
        if keyframe is None:
            return None
        initial = compose(invert(_to_transform(state.poses[keyframe])), _to_transform(state.poses[frame]))
        try:
            result = self.register(frame, keyframe, initial)
        except IcpFailure as exc:
            logger.info("loop closure %d -> %d rejected: %s", frame, keyframe, exc)
            return None
        if not self._verified(result):
            logger.info(
                "loop closure %d -> %d rejected: %s with error %.3g",
                frame, keyframe, result.termination.value, result.final_error,
            )
            return None
        relative = _planar(result.transform)
        target = _to_pose(compose(_to_transform(state.poses[keyframe]), relative))
        correction = self._apply_closure(state.poses, keyframe, frame, target, list(range(keyframe + 1, frame + 1)))
        closure = LoopClosure(
            frame,
            keyframe,
            result.final_error,
            tuple(float(c) for c in correction),  # type: ignore[arg-type]
            relative.to_planar_pose(),
        )
        logger.info("loop closure %d -> %d accepted, correction %s", frame, keyframe, correction)
        return closure

    def online_pass(self, truth: Trajectory) -> _PassState:
        n = len(truth)
        self.clouds = []
        poses = np.zeros((n, 3))
        poses[0] = truth.poses[0]
        state = _PassState(poses=poses, emitted=np.zeros((n, 3)))
        state.emitted[0] = poses[0]
        state.keyframes.append(0)
        state.frames.append(FrameDiagnostics(frame=0))
        self.clouds.append(self.match_features(self.sense(truth[0], 0)))

        delta = RigidTransform.identity()
        last_closure = -math.inf
        for k in range(1, n):
            started = time.perf_counter()
            diag = FrameDiagnostics(frame=k)
            self.clouds.append(self.match_features(self.sense(truth[k], k)))
            try:
                result = self.register(k, k - 1, delta)
                delta = _planar(result.transform)
                diag.iterations = result.iterations
                diag.error = result.final_error
                diag.termination = result.termination.value
            except IcpFailure as exc:
                diag.failure = f"{type(exc).__name__}: {exc}"
                logger.warning("frame %d: registration failed (%s), coasting on previous motion", k, exc)
            poses[k] = _to_pose(compose(_to_transform(poses[k - 1]), delta))

            if self.slam_config.loop_closure and k - last_closure >= self.slam_config.closure_min_separation:
                closure = self._try_closure(state, k)
                if closure is not None:
                    state.closures.append(closure)
                    last_closure = k
            if (state.closures and state.closures[-1].frame == k) or self._is_keyframe(
                poses[k], poses[state.keyframes[-1]]
            ):
                state.keyframes.append(k)

            state.emitted[k] = poses[k]
            diag.latency_ms = (time.perf_counter() - started) * 1e3
            state.frames.append(diag)
        state.poses = self.bundle_adjust(state.poses)
        return state

    def _submap(self, poses: np.ndarray, members: list[int]) -> PointCloud:
        """Clouds of ``members`` placed in the world frame at ``poses`` and merged."""
        placed = [apply(_to_transform(poses[m]), self.clouds[m]) for m in members]
        weighted = any(c.has_weights for c in placed)
        points = np.vstack([c.points for c in placed])
        weights = None
        if weighted:
            weights = np.concatenate(
                [c.weights if c.weights is not None else np.ones(len(c)) for c in placed]
            )
        return PointCloud(points, None, weights)

    def _refine(self, keyframe: int, members: set[int], estimate: np.ndarray, config: IcpConfig) -> Optional[IcpResult]:
        members = members - {keyframe}
        if not members:
            return None
        submap = self._submap(estimate, sorted(members))
        try:
            result = run_icp(self.clouds[keyframe], submap, replace(config, initial=_to_transform(estimate[keyframe])))
            return self._checked(result, len(self.clouds[keyframe]))
        except (IcpFailure, TooFewPoints) as exc:
            logger.info("refinement of keyframe %d against %s skipped: %s", keyframe, sorted(members), exc)
            return None

    def refinement_pass(self, first: _PassState) -> _PassState:
        """Re-register every keyframe with hindsight under a tighter distance cap.

        Each keyframe is first matched against the anchor submap, the pass-1
        poses of the keyframes around the first one; the fit is kept when its
        error is within the closure gate. Otherwise the keyframe is matched
        against its own neighbours and, for closure frames, those of its
        partner. Corrections found at keyframes are interpolated onto the
        frames between them. The first keyframe stays anchored.
        """
        cfg = self.slam_config
        tight = replace(self.icp_config, rejection=_tightened(self.icp_config.rejection, cfg.offline_rejection_scale))

        estimate = first.poses
        keyframes = first.keyframes
        position = {kf: n for n, kf in enumerate(keyframes)}
        partners: dict[int, set[int]] = {kf: set() for kf in keyframes}
        for closure in first.closures:
            partners[closure.frame].add(closure.keyframe)
            partners[closure.keyframe].add(closure.frame)

        def around(kf: int) -> set[int]:
            n = position[kf]
            lo, hi = max(0, n - cfg.refinement_window), n + cfg.refinement_window + 1
            return set(keyframes[lo:hi])

        anchor = around(keyframes[0])
        corrections = np.zeros((len(keyframes), 3))
        frames = {d.frame: d for d in first.frames}
        anchored = 0
        for n, kf in enumerate(keyframes[1:], start=1):
            result = self._refine(kf, anchor, estimate, tight)
            if result is not None and result.final_error <= CLOSURE_GATE_FACTOR * self.icp_config.theta0:
                anchored += 1
            else:
                members = around(kf)
                for partner in partners[kf]:
                    members |= around(partner)
                result = self._refine(kf, members, estimate, tight)
            if result is None:
                continue
            corrections[n] = _pose_difference(_to_pose(_planar(result.transform)), estimate[kf])
            frames[kf].refined_error = result.final_error

        indices = np.arange(estimate.shape[0])
        anchors = np.array(keyframes)
        spread = np.column_stack([np.interp(indices, anchors, corrections[:, c]) for c in range(3)])
        refined = estimate + spread
        refined[:, 2] = [wrap_angle(float(a)) for a in refined[:, 2]]
        logger.info(
            "refinement pass: %d/%d keyframes matched to the anchor, moved by at most %.3g m",
            anchored, len(keyframes) - 1, float(np.max(np.hypot(corrections[:, 0], corrections[:, 1]))),
        )
        return _PassState(
            poses=self.bundle_adjust(refined),
            emitted=first.emitted,
            frames=first.frames,
            keyframes=keyframes,
            closures=first.closures,
        )


def _report(
    state: _PassState, truth: Trajectory, passes: int, mode: PipelineMode, match: MatchMode
) -> SlamReport:
    estimated = Trajectory(state.poses)
    return SlamReport(
        estimated=estimated,
        ground_truth=truth,
        frame_estimates=Trajectory(state.emitted),
        ate=absolute_trajectory_error(estimated, truth),
        frames=state.frames,
        loop_closures=state.closures,
        keyframes=state.keyframes,
        passes=passes,
        mode=mode,
        match=match,
    )


def _prepare(truth: Trajectory, slam_config: SlamConfig) -> None:
    if len(truth) < 2:
        raise ValueError("a SLAM run needs at least 2 frames")
    truth.validate_steps(slam_config.max_step_translation, slam_config.max_step_rotation)


def run_online(
    world: World,
    true_trajectory: Trajectory,
    sensor: SensorConfig,
    icp_config: IcpConfig,
    slam_config: Optional[SlamConfig] = None,
) -> SlamReport:
    """Sequential, single-pass scan matching with loop closure."""
    slam_config = slam_config or SlamConfig()
    _prepare(true_trajectory, slam_config)
    pipeline = ScanMatchingPipeline(world, sensor, icp_config, slam_config)
    state = pipeline.online_pass(true_trajectory)
    return _report(state, true_trajectory, 1, PipelineMode.ONLINE, slam_config.mode)


def run_offline(
    world: World,
    true_trajectory: Trajectory,
    sensor: SensorConfig,
    icp_config: IcpConfig,
    slam_config: Optional[SlamConfig] = None,
) -> SlamReport:
    """The online pass followed by exactly one global refinement pass."""
    slam_config = slam_config or SlamConfig()
    _prepare(true_trajectory, slam_config)
    pipeline = ScanMatchingPipeline(world, sensor, icp_config, slam_config)
    first = pipeline.online_pass(true_trajectory)
    second = pipeline.refinement_pass(first)
    return _report(second, true_trajectory, 2, PipelineMode.OFFLINE, slam_config.mode)


def run_slam(
    world: World,
    true_trajectory: Trajectory,
    sensor: SensorConfig,
    icp_config: IcpConfig,
    slam_config: Optional[SlamConfig] = None,
) -> SlamReport:
    """Run the pipeline selected by ``slam_config.pipeline``."""
    slam_config = slam_config or SlamConfig()
    if slam_config.pipeline is PipelineMode.OFFLINE:
        return run_offline(world, true_trajectory, sensor, icp_config, slam_config)
    return run_online(world, true_trajectory, sensor, icp_config, slam_config)
