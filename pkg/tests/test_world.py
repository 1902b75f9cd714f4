"""Tests for worlds, trajectories and the simulated range sensor."""

import math

import numpy as np
import pytest

from icp_toolkit.core.errors import FixtureError
from icp_toolkit.slam.world import (
    Scan,
    SensorConfig,
    Trajectory,
    World,
    scan_to_cloud,
    simulate_scan,
)


def single_return(landmark: float = 0.0) -> Scan:
    return Scan(np.array([0.0]), np.array([1.0]), np.array([True]), np.array([landmark]))


class TestSimulateScan:
    """Test cases for ray casting against wall segments."""

    def test_beam_along_x_in_unit_square(self) -> None:
        """From the centre of the unit square the +x wall is 0.5 away."""
        scan = simulate_scan(World.rectangle(1.0, 1.0), (0.5, 0.5, 0.0), SensorConfig(n_beams=1))
        assert scan.hits[0]
        assert scan.ranges[0] == pytest.approx(0.5, abs=1e-12)

    def test_full_sweep_bounds(self) -> None:
        """Every range in the unit square lies between 0.5 and half the diagonal."""
        scan = simulate_scan(World.rectangle(1.0, 1.0), (0.5, 0.5, 0.3), SensorConfig(n_beams=360))
        assert scan.hits.all()
        assert scan.ranges.min() >= 0.5 - 1e-12
        assert scan.ranges.max() <= math.sqrt(2.0) / 2.0 + 1e-12

    def test_bearing_zero_is_in_the_sweep(self) -> None:
        """A full sweep contains the forward beam."""
        bearings = SensorConfig(n_beams=360).bearings()
        assert 0.0 in bearings
        assert np.all(np.diff(bearings) > 0)

    def test_miss_reports_max_range(self) -> None:
        """A beam pointing away from the only wall finds nothing."""
        world = World(np.array([[-1.0, -1.0, -1.0, 1.0]]), np.empty((0, 3)))
        scan = simulate_scan(world, (0.0, 0.0, 0.0), SensorConfig(n_beams=1, max_range=5.0))
        assert not scan.hits[0]
        assert scan.ranges[0] == 5.0

    def test_beyond_max_range_is_a_miss(self) -> None:
        """Walls farther than max_range are not seen."""
        scan = simulate_scan(World.rectangle(10.0, 10.0), (1.0, 5.0, 0.0), SensorConfig(n_beams=1, max_range=5.0))
        assert not scan.hits[0]

    def test_nearest_wall_wins(self) -> None:
        """Two walls along one beam: the closer one is hit."""
        walls = np.array([[2.0, -1.0, 2.0, 1.0], [1.0, -1.0, 1.0, 1.0]])
        scan = simulate_scan(World(walls, np.empty((0, 3))), (0.0, 0.0, 0.0), SensorConfig(n_beams=1))
        assert scan.ranges[0] == pytest.approx(1.0)

    def test_landmark_capture(self) -> None:
        """A return near a landmark carries its confidence."""
        world = World.rectangle(1.0, 1.0, landmarks=[[1.0, 0.5, 5.0]])
        scan = simulate_scan(world, (0.5, 0.5, 0.0), SensorConfig(n_beams=360))
        forward = int(np.flatnonzero(scan.bearings == 0.0)[0])
        assert scan.landmark[forward] == 5.0
        assert scan.landmark_flags.sum() >= 1
        assert not scan.landmark_flags[(forward + 180) % 360]

    def test_noise_is_seeded_per_frame(self) -> None:
        """Same seed and frame reproduce; another frame draws new noise."""
        world = World.rectangle(4.0, 3.0)
        sensor = SensorConfig(n_beams=90, noise_sigma=0.01, seed=7)
        a = simulate_scan(world, (2.0, 1.5, 0.0), sensor, frame=3)
        b = simulate_scan(world, (2.0, 1.5, 0.0), sensor, frame=3)
        c = simulate_scan(world, (2.0, 1.5, 0.0), sensor, frame=4)
        np.testing.assert_array_equal(a.ranges, b.ranges)
        assert not np.array_equal(a.ranges, c.ranges)


class TestScanToCloud:
    """Test cases for turning returns into points."""

    def test_identity_hint(self) -> None:
        """Bearing 0, range 1 becomes (1, 0, 0)."""
        np.testing.assert_array_equal(scan_to_cloud(single_return()).points, [[1.0, 0.0, 0.0]])

    def test_heading_hint(self) -> None:
        """The same return seen with heading pi/2 lands on (0, 1, 0)."""
        cloud = scan_to_cloud(single_return(), (0.0, 0.0, math.pi / 2))
        np.testing.assert_allclose(cloud.points, [[0.0, 1.0, 0.0]], atol=1e-12)

    def test_landmark_weight(self) -> None:
        """A landmark return with confidence 5 has weight 5."""
        cloud = scan_to_cloud(single_return(landmark=5.0))
        assert cloud.weights is not None
        np.testing.assert_array_equal(cloud.weights, [5.0])

    def test_no_landmarks_no_weights(self) -> None:
        """Plain returns stay unweighted."""
        assert scan_to_cloud(single_return()).weights is None

    def test_misses_are_dropped(self) -> None:
        """Only hits become points."""
        scan = Scan(np.array([0.0, 1.0]), np.array([1.0, 20.0]), np.array([True, False]), np.zeros(2))
        assert len(scan_to_cloud(scan)) == 1


class TestFixtures:
    """Test cases for world and trajectory validation."""

    def test_world_needs_walls(self) -> None:
        """An empty world is refused."""
        with pytest.raises(FixtureError):
            World(np.empty((0, 4)), np.empty((0, 3)))

    def test_landmark_confidence_above_one(self) -> None:
        """Landmark confidence must exceed ordinary points."""
        with pytest.raises(FixtureError):
            World.rectangle(1.0, 1.0, landmarks=[[0.5, 0.0, 1.0]])

    def test_relative_transform(self) -> None:
        """Frame j seen from frame i."""
        truth = Trajectory(np.array([[0.0, 0.0, math.pi / 2], [0.0, 1.0, math.pi / 2]]))
        x, y, theta = truth.relative(0, 1).to_planar_pose()
        assert (x, y, theta) == pytest.approx((1.0, 0.0, 0.0), abs=1e-12)

    def test_step_bound(self) -> None:
        """A jump larger than the bound is reported with its frames."""
        truth = Trajectory(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))
        with pytest.raises(FixtureError, match="frames 0 and 1"):
            truth.validate_steps(1.0, math.pi / 4)

    def test_step_bound_wraps_heading(self) -> None:
        """Crossing the +-pi seam is a small turn."""
        truth = Trajectory(np.array([[0.0, 0.0, 3.1], [0.0, 0.0, -3.1]]))
        truth.validate_steps(1.0, math.pi / 4)
