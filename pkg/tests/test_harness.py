"""Tests for the scan-matching SLAM harness."""

import math
from dataclasses import replace

import numpy as np
import pytest

from icp_toolkit.core.alignment import MetricKind
from icp_toolkit.core.correspondence import CorrespondenceSet, RejectionPolicy
from icp_toolkit.core.errors import FixtureError
from icp_toolkit.core.geometry import PointCloud, RigidTransform, compose
from icp_toolkit.core.icp import IcpConfig, IcpResult, Termination
from icp_toolkit.slam.harness import (
    LINE_NOISE_FACTOR,
    MatchMode,
    PipelineMode,
    ScanMatchingPipeline,
    SlamConfig,
    absolute_trajectory_error,
    matching_config,
    run_offline,
    run_online,
    run_slam,
)
from icp_toolkit.slam.world import SensorConfig, Trajectory, World

ROOM_LANDMARKS = [[4.0, 0.0, 5.0], [8.0, 3.0, 5.0], [4.0, 6.0, 5.0], [0.0, 3.0, 5.0]]
LOOP_SENSOR = SensorConfig(n_beams=720, noise_sigma=0.005, seed=42)
LOOP_ICP = IcpConfig(theta0=1e-4)
EXACT_ICP = IcpConfig(theta0=1e-20, rejection=RejectionPolicy.none())


def leg(start: tuple[float, float], heading: float, steps: int, step: float = 0.25) -> list[list[float]]:
    x, y = start
    return [[x + k * step * math.cos(heading), y + k * step * math.sin(heading), heading] for k in range(1, steps + 1)]


def turn(at: tuple[float, float], heading: float, turns: int = 6) -> list[list[float]]:
    increment = math.radians(15.0)
    return [[at[0], at[1], heading + k * increment] for k in range(1, turns + 1)]


def square_loop() -> Trajectory:
    """Anticlockwise 4 m x 3 m loop inside an 8 m x 6 m room, ending where it started."""
    poses = [[2.0, 1.5, 0.0]]
    poses += leg((2.0, 1.5), 0.0, 16)
    poses += turn((6.0, 1.5), 0.0)
    poses += leg((6.0, 1.5), math.pi / 2, 12)
    poses += turn((6.0, 4.5), math.pi / 2)
    poses += leg((6.0, 4.5), math.pi, 16)
    poses += turn((2.0, 4.5), math.pi)
    poses += leg((2.0, 4.5), 3 * math.pi / 2, 12)
    poses += turn((2.0, 1.5), 3 * math.pi / 2)
    return Trajectory(np.array(poses))


def loop_room() -> World:
    return World.rectangle(8.0, 6.0, landmarks=ROOM_LANDMARKS)


def corridor() -> tuple[World, Trajectory]:
    """A closed 20 m x 2 m corridor and a straight 10-frame run along its centre line."""
    poses = np.array([[2.0 + 0.25 * k, 1.0, 0.0] for k in range(10)])
    return World.rectangle(20.0, 2.0), Trajectory(poses)


@pytest.fixture(scope="module")
def loop_runs() -> dict[str, object]:
    world, truth = loop_room(), square_loop()
    return {
        "online": run_online(world, truth, LOOP_SENSOR, LOOP_ICP),
        "open": run_online(world, truth, LOOP_SENSOR, LOOP_ICP, SlamConfig(loop_closure=False)),
        "offline": run_offline(world, truth, LOOP_SENSOR, LOOP_ICP),
    }


class TestAbsoluteTrajectoryError:
    """Test cases for the ATE metric."""

    def test_matches_brute_force(self) -> None:
        """Root mean square of per-frame position errors; headings ignored."""
        rng = np.random.default_rng(0)
        truth = Trajectory(rng.normal(size=(15, 3)))
        estimate = Trajectory(truth.poses + rng.normal(0.0, 0.1, size=(15, 3)))
        squared = [(e[0] - t[0]) ** 2 + (e[1] - t[1]) ** 2 for e, t in zip(estimate.poses, truth.poses)]
        assert absolute_trajectory_error(estimate, truth) == pytest.approx(math.sqrt(sum(squared) / 15), rel=1e-12)

    def test_length_mismatch(self) -> None:
        """Trajectories must pair up frame by frame."""
        with pytest.raises(ValueError):
            absolute_trajectory_error(Trajectory(np.zeros((2, 3))), Trajectory(np.zeros((3, 3))))


class TestRunOnline:
    """Test cases for the sequential pipeline."""

    def test_static_robot(self) -> None:
        """A robot that never moves is tracked exactly."""
        truth = Trajectory(np.tile([1.5, 1.2, 0.3], (12, 1)))
        report = run_online(loop_room(), truth, SensorConfig(), IcpConfig())
        assert report.ate < 1e-9
        assert report.passes == 1
        assert len(report.frames) == 12

    def test_noise_free_corridor(self) -> None:
        """Point-to-line odometry down a closed corridor recovers the run."""
        world, truth = corridor()
        report = run_online(world, truth, SensorConfig(), EXACT_ICP, SlamConfig(mode=MatchMode.NON_LANDMARK))
        assert report.ate < 1e-6
        assert all(f.failure is None for f in report.frames)

    def test_first_pose_is_anchored(self) -> None:
        """Frame 0 is the ground-truth start and always a keyframe."""
        world, truth = corridor()
        report = run_online(world, truth, SensorConfig(), EXACT_ICP, SlamConfig(mode=MatchMode.NON_LANDMARK))
        np.testing.assert_array_equal(report.estimated.poses[0], truth.poses[0])
        assert report.keyframes[0] == 0

    def test_keyframes_follow_motion(self) -> None:
        """0.25 m steps exceed the 0.2 m gate, so every frame becomes a keyframe."""
        world, truth = corridor()
        report = run_online(world, truth, SensorConfig(), EXACT_ICP, SlamConfig(mode=MatchMode.NON_LANDMARK))
        assert report.keyframes == list(range(10))

    def test_mode_equivalence_without_landmarks(self) -> None:
        """With no landmarks and point-to-point forced, both match modes agree exactly."""
        world = World.rectangle(8.0, 6.0)
        truth = square_loop().prefix(30)
        sensor = replace(LOOP_SENSOR, n_beams=360)
        landmark = run_online(world, truth, sensor, LOOP_ICP, SlamConfig(mode=MatchMode.LANDMARK))
        plain = run_online(
            world,
            truth,
            sensor,
            LOOP_ICP,
            SlamConfig(mode=MatchMode.NON_LANDMARK, metric_override=MetricKind.POINT_TO_POINT),
        )
        np.testing.assert_array_equal(landmark.estimated.poses, plain.estimated.poses)

    def test_single_frame_rejected(self) -> None:
        """One frame is not a run."""
        with pytest.raises(ValueError):
            run_online(loop_room(), Trajectory(np.array([[1.0, 1.0, 0.0]])), SensorConfig(), IcpConfig())

    def test_step_bound_enforced(self) -> None:
        """Jumps beyond the motion bound are refused before sensing."""
        truth = Trajectory(np.array([[1.0, 1.0, 0.0], [3.0, 1.0, 0.0]]))
        with pytest.raises(FixtureError):
            run_online(loop_room(), truth, SensorConfig(), IcpConfig())

    def test_noisy_open_loop_keeps_moving(self, loop_runs: dict) -> None:
        """Noisy odometry without closure tracks the whole loop instead of freezing."""
        report = loop_runs["open"]
        assert all(f.failure is None for f in report.frames)
        assert report.ate < 0.3
        steps = np.hypot(*np.diff(report.estimated.positions, axis=0).T)
        true_steps = np.hypot(*np.diff(report.ground_truth.positions, axis=0).T)
        assert steps.sum() == pytest.approx(true_steps.sum(), rel=0.1)

    def test_noisy_point_to_line_tracks(self) -> None:
        """Line matching on noisy scans keeps valid lines and follows the first leg and turn."""
        truth = square_loop().prefix(20)
        report = run_online(
            loop_room(), truth, LOOP_SENSOR, IcpConfig(theta0=1e-6),
            SlamConfig(mode=MatchMode.NON_LANDMARK, loop_closure=False),
        )
        assert all(f.failure is None for f in report.frames)
        assert report.ate < 0.1


class TestMatchingConfig:
    """Test cases for the registration settings the harness derives."""

    def test_default_rejection_is_step_cap(self) -> None:
        """Without an override, pairs farther apart than one step's translation are dropped."""
        config = matching_config(IcpConfig(), SlamConfig(max_step_translation=0.8), SensorConfig())
        assert config.rejection == RejectionPolicy.absolute(0.8)
        assert not config.align_centroids_first
        assert config.initial is None

    def test_rejection_override(self) -> None:
        """An explicit harness policy wins over the registration's own."""
        policy = RejectionPolicy(max_distance=0.3, trim_fraction=0.1)
        config = matching_config(IcpConfig(), SlamConfig(rejection=policy), SensorConfig())
        assert config.rejection == policy

    def test_noisy_lines_widen_tolerance(self) -> None:
        """Range noise scales the line tolerance and enlarges the fit neighbourhood."""
        slam = SlamConfig(mode=MatchMode.NON_LANDMARK)
        noisy = matching_config(IcpConfig(), slam, LOOP_SENSOR)
        assert noisy.line_tolerance == pytest.approx(LINE_NOISE_FACTOR * LOOP_SENSOR.noise_sigma)
        assert noisy.line_neighbors >= 8
        exact = matching_config(IcpConfig(), slam, SensorConfig())
        assert exact.line_tolerance == IcpConfig().line_tolerance
        assert exact.line_neighbors == IcpConfig().line_neighbors

    def test_point_metric_keeps_line_settings(self) -> None:
        """Landmark matching leaves the line parameters alone."""
        config = matching_config(IcpConfig(), SlamConfig(mode=MatchMode.LANDMARK), LOOP_SENSOR)
        assert config.line_tolerance == IcpConfig().line_tolerance

    @pytest.mark.parametrize(
        "kwargs", [{"offline_rejection_scale": 0.0}, {"min_overlap": 1.5}, {"refinement_window": 0}]
    )
    def test_invalid_slam_config(self, kwargs: dict[str, float]) -> None:
        """Out-of-range harness parameters are refused."""
        with pytest.raises(ValueError):
            SlamConfig(**kwargs)  # type: ignore[arg-type]


class TestLoopClosure:
    """Test cases on the noisy square loop."""

    def test_closure_detected(self, loop_runs: dict) -> None:
        """Returning to the start closes the loop at least once."""
        report = loop_runs["online"]
        assert len(report.loop_closures) >= 1
        closure = report.loop_closures[0]
        assert closure.frame - closure.keyframe >= 10
        assert closure.frame in report.keyframes
        assert closure.error <= 4.0 * LOOP_ICP.theta0

    def test_closure_does_not_hurt(self, loop_runs: dict) -> None:
        """ATE with closure enabled is small and no worse than without."""
        assert not loop_runs["open"].loop_closures
        assert loop_runs["online"].ate < 0.3
        assert loop_runs["online"].ate <= loop_runs["open"].ate + 1e-9

    def test_closure_lands_on_verified_pose(self, loop_runs: dict) -> None:
        """The closure frame sits exactly where the verification put it relative to the keyframe."""
        report = loop_runs["online"]
        closure = report.loop_closures[0]
        keyframe = RigidTransform.from_planar_pose(*report.frame_estimates[closure.keyframe])
        expected = compose(keyframe, RigidTransform.from_planar_pose(*closure.relative)).to_planar_pose()
        np.testing.assert_allclose(report.frame_estimates.poses[closure.frame], expected, atol=1e-9)
        np.testing.assert_allclose(report.estimated.poses[closure.frame], expected, atol=1e-9)

    def test_closure_spreads_correction_linearly(self, loop_runs: dict) -> None:
        """Frames between keyframe and closure move by their share of the correction, without jumps."""
        online, open_loop = loop_runs["online"], loop_runs["open"]
        closure = online.loop_closures[0]
        assert all(later.keyframe >= closure.frame for later in online.loop_closures[1:])
        kf, frame = closure.keyframe, closure.frame
        correction = np.array(closure.correction[:2])
        span = frame - kf
        np.testing.assert_array_equal(online.estimated.poses[: kf + 1], open_loop.estimated.poses[: kf + 1])
        for m in range(kf + 1, frame + 1):
            shift = online.estimated.poses[m, :2] - open_loop.estimated.poses[m, :2]
            np.testing.assert_allclose(shift, correction * (m - kf) / span, atol=1e-9)
        online_jumps = np.hypot(*np.diff(online.estimated.positions[kf : frame + 1], axis=0).T)
        open_jumps = np.hypot(*np.diff(open_loop.estimated.positions[kf : frame + 1], axis=0).T)
        assert np.all(online_jumps <= open_jumps + np.linalg.norm(correction) / span + 1e-9)

    def test_closure_gate(self) -> None:
        """An impossible gate rejects every candidate."""
        truth = square_loop()
        report = run_online(loop_room(), truth, LOOP_SENSOR, IcpConfig(theta0=1e-12))
        assert not report.loop_closures

    def test_gate_requires_convergence(self) -> None:
        """A fit that stalled or ran out of iterations never verifies a closure, however small its error."""
        pipeline = ScanMatchingPipeline(loop_room(), SensorConfig(), LOOP_ICP, SlamConfig())
        cloud = PointCloud.from_points([[1.0, 0.0, 0.0]])

        def outcome(termination: Termination) -> IcpResult:
            return IcpResult(
                transform=RigidTransform.identity(),
                error_trace=[1e-9],
                iterations=1,
                termination=termination,
                final_correspondences=CorrespondenceSet.empty(),
                aligned=cloud,
            )

        assert pipeline._verified(outcome(Termination.CONVERGED))
        assert not pipeline._verified(outcome(Termination.STALLED))
        assert not pipeline._verified(outcome(Termination.MAX_ITERATIONS))

    def test_frame_estimates_are_causal(self, loop_runs: dict) -> None:
        """Truncating the input leaves the estimates already emitted unchanged."""
        full = loop_runs["online"]
        prefix = run_online(loop_room(), square_loop().prefix(40), LOOP_SENSOR, LOOP_ICP)
        np.testing.assert_array_equal(prefix.frame_estimates.poses, full.frame_estimates.poses[:40])

    def test_report_serializes(self, loop_runs: dict) -> None:
        """The report dictionary carries trajectories, keyframes and closures."""
        data = loop_runs["online"].to_dict()
        assert data["mode"] == "online"
        assert data["match"] == "landmark"
        assert len(data["estimated"]) == len(square_loop())
        assert data["loop_closures"][0]["frame"] == loop_runs["online"].loop_closures[0].frame


class TestRunOffline:
    """Test cases for the two-pass pipeline."""

    def test_noise_free_fixed_point(self) -> None:
        """On exact data the refinement pass has nothing to fix."""
        world, truth = corridor()
        config = SlamConfig(mode=MatchMode.NON_LANDMARK)
        online = run_online(world, truth, SensorConfig(), EXACT_ICP, config)
        offline = run_offline(world, truth, SensorConfig(), EXACT_ICP, config)
        assert offline.passes == 2
        assert np.max(np.abs(offline.estimated.poses - online.estimated.poses)) < 1e-9

    def test_refinement_improves_noisy_loop(self, loop_runs: dict) -> None:
        """The second pass is at least as accurate as the online pass."""
        assert loop_runs["offline"].ate < 0.3
        assert loop_runs["offline"].ate <= loop_runs["online"].ate + 1e-9

    def test_frame_estimates_come_from_the_online_pass(self, loop_runs: dict) -> None:
        """The causal estimates of an offline run are those of the online pass."""
        np.testing.assert_array_equal(
            loop_runs["offline"].frame_estimates.poses, loop_runs["online"].frame_estimates.poses
        )

    def test_single_frame_rejected(self) -> None:
        """Offline needs at least two frames as well."""
        with pytest.raises(ValueError):
            run_offline(loop_room(), Trajectory(np.array([[1.0, 1.0, 0.0]])), SensorConfig(), IcpConfig())


class TestRunSlam:
    """Test cases for pipeline dispatch."""

    @pytest.mark.parametrize("pipeline, passes", [(PipelineMode.ONLINE, 1), (PipelineMode.OFFLINE, 2)])
    def test_dispatch(self, pipeline: PipelineMode, passes: int) -> None:
        """The configured pipeline runs."""
        world, truth = corridor()
        config = SlamConfig(mode=MatchMode.NON_LANDMARK, pipeline=pipeline)
        report = run_slam(world, truth, SensorConfig(), EXACT_ICP, config)
        assert report.mode is pipeline
        assert report.passes == passes

    def test_metric_follows_match_mode(self) -> None:
        """Landmark mode matches points, non-landmark mode matches lines."""
        assert SlamConfig(mode=MatchMode.LANDMARK).metric is MetricKind.POINT_TO_POINT
        assert SlamConfig(mode=MatchMode.NON_LANDMARK).metric is MetricKind.POINT_TO_LINE
        assert SlamConfig(metric_override=MetricKind.POINT_TO_POINT, mode=MatchMode.NON_LANDMARK).metric is MetricKind.POINT_TO_POINT
