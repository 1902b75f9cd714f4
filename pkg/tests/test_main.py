"""Tests for the command-line entry point."""

import json
import os
import shutil
import tempfile
from pathlib import Path
from unittest.mock import Mock, patch

import numpy as np
import pytest

from icp_toolkit.config.settings import Settings
from icp_toolkit.core.geometry import PointCloud
from icp_toolkit.io.clouds import read_cloud, write_cloud
from icp_toolkit.io.fixtures import write_trajectory, write_world
from icp_toolkit.io.report import RunReport
from icp_toolkit.main import cli_dispatch, main, synthetic_cloud
from icp_toolkit.slam.world import Trajectory, World


@patch.dict(os.environ, {}, clear=True)
def plain_settings() -> Settings:
    return Settings()


class TestCli:
    """Test cases for the icp-toolkit command line."""

    def setup_method(self) -> None:
        """Set up test environment."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.settings_patch = patch("icp_toolkit.main.settings", plain_settings())
        self.settings_patch.start()

    def teardown_method(self) -> None:
        """Clean up test environment."""
        self.settings_patch.stop()
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def cloud_file(self, name: str, cloud: PointCloud) -> Path:
        path = self.temp_dir / name
        write_cloud(cloud, path)
        return path

    def steps_file(self) -> Path:
        path = self.temp_dir / "steps.json"
        path.write_text(
            json.dumps(
                {
                    "shape": 3,
                    "initial": [1, 0, 0],
                    "motion_noise": {"0": 0.5, "1": 0.5},
                    "steps": [{"command": 0, "likelihood": [0.2, 0.8, 1.0]}, {"command": 0, "likelihood": [1, 1, 1]}],
                }
            )
        )
        return path

    def test_register_self(self) -> None:
        """Registering a cloud onto itself exits 0 with an identity transform."""
        a = self.cloud_file("a.xyz", synthetic_cloud(100, np.random.default_rng(0)))
        out = self.temp_dir / "report.json"
        assert cli_dispatch(["register", str(a), str(a), "--report", str(out)]) == 0
        report = RunReport.load(out)
        assert report.termination == "Converged"
        np.testing.assert_allclose(report.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(report.translation, np.zeros(3), atol=1e-9)
        assert report.config["source"] == str(a)

    def test_register_writes_aligned_cloud(self) -> None:
        """--out saves the transformed source."""
        rng = np.random.default_rng(1)
        source = synthetic_cloud(200, rng)
        dest = PointCloud(source.points + np.array([0.2, -0.1, 0.05]))
        aligned = self.temp_dir / "aligned.ply"
        code = cli_dispatch(
            ["register", str(self.cloud_file("s.xyz", source)), str(self.cloud_file("d.xyz", dest)),
             "--out", str(aligned), "--report", str(self.temp_dir / "r.json")]
        )
        assert code == 0
        np.testing.assert_allclose(read_cloud(aligned).points, dest.points, atol=1e-6)

    def test_register_point_to_plane_estimates_normals(self) -> None:
        """The plane metric works on a destination file without normals."""
        a = self.cloud_file("a.xyz", synthetic_cloud(300, np.random.default_rng(2)))
        out = self.temp_dir / "report.json"
        assert cli_dispatch(["register", str(a), str(a), "--metric", "p2plane", "--report", str(out)]) == 0
        assert RunReport.load(out).config["metric"] == "p2plane"

    def test_report_to_stdout(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Without --report or a report directory the JSON goes to stdout."""
        a = self.cloud_file("a.xyz", synthetic_cloud(50, np.random.default_rng(3)))
        assert cli_dispatch(["register", str(a), str(a)]) == 0
        assert json.loads(capsys.readouterr().out)["command"] == "register"

    def test_report_dir_setting(self) -> None:
        """A configured report directory receives <command>-report.json."""
        configured = plain_settings()
        configured.report_dir = self.temp_dir / "reports"
        with patch("icp_toolkit.main.settings", configured):
            assert cli_dispatch(["bench", "--size", "50", "--reps", "1"]) == 0
        assert (self.temp_dir / "reports" / "bench-report.json").exists()

    def test_unknown_flag(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Bad usage exits 1 with the usage text."""
        assert cli_dispatch(["register", "a.xyz", "b.xyz", "--bogus"]) == 1
        err = capsys.readouterr().err
        assert "usage:" in err
        assert "error:" in err

    def test_missing_command(self) -> None:
        """A subcommand is required."""
        assert cli_dispatch([]) == 1

    def test_out_of_range_value(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Values outside their range are usage errors naming the flag."""
        a = self.cloud_file("a.xyz", synthetic_cloud(10, np.random.default_rng(4)))
        assert cli_dispatch(["register", str(a), str(a), "--trim", "1.5"]) == 1
        assert "--trim" in capsys.readouterr().err

    def test_no_correspondences(self, capsys: pytest.CaptureFixture[str]) -> None:
        """A forced rejection exits 2 with a NoCorrespondences diagnostic."""
        a = self.cloud_file("a.xyz", PointCloud.from_points([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]))
        far = self.cloud_file("far_away.xyz", PointCloud.from_points([[100, 100, 97], [100, 100, 100], [100, 100, 103]]))
        assert cli_dispatch(["register", str(a), str(far), "--max-dist", "0.01"]) == 2
        assert "NoCorrespondences" in capsys.readouterr().err

    def test_translated_copy_beyond_cap(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Default centroid alignment does not rescue a copy shifted far past --max-dist."""
        cloud = synthetic_cloud(100, np.random.default_rng(5))
        a = self.cloud_file("a.xyz", cloud)
        far = self.cloud_file("far_away.xyz", PointCloud(cloud.points + np.array([100.0, 100.0, 100.0])))
        assert cli_dispatch(["register", str(a), str(far), "--max-dist", "0.01"]) == 2
        assert "NoCorrespondences" in capsys.readouterr().err

    def test_undecodable_input(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Bytes that are not UTF-8 are a parse error, not a crash."""
        bad = self.temp_dir / "bad.xyz"
        bad.write_bytes(b"0 0 0\n\xff\xfe 1 1\n")
        assert cli_dispatch(["register", str(bad), str(bad)]) == 2
        err = capsys.readouterr().err
        assert "ParseError" in err
        assert "line 2" in err

    def test_missing_file(self, capsys: pytest.CaptureFixture[str]) -> None:
        """An unreadable input is a runtime error."""
        missing = str(self.temp_dir / "missing.xyz")
        assert cli_dispatch(["register", missing, missing]) == 2
        assert "CloudIoError" in capsys.readouterr().err

    def test_filter_demo(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Prints one line per step and records every posterior."""
        out = self.temp_dir / "filter.json"
        assert cli_dispatch(["filter-demo", "--steps", str(self.steps_file()), "--report", str(out)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "step 1: 0.200000 0.800000 0.000000"
        assert len(lines) == 2
        beliefs = RunReport.load(out).beliefs or []
        np.testing.assert_allclose(beliefs[0], [0.2, 0.8, 0.0], atol=1e-15)

    def test_bench_is_deterministic(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Two runs with one seed agree on everything but wall-clock fields."""
        first, second = self.temp_dir / "b1.json", self.temp_dir / "b2.json"
        for path in (first, second):
            assert cli_dispatch(["bench", "--size", "200", "--reps", "2", "--seed", "5", "--report", str(path)]) == 0
        assert RunReport.load(first).without_timings() == RunReport.load(second).without_timings()
        assert "total" in capsys.readouterr().out

    def test_slam_sim_is_deterministic(self) -> None:
        """A seeded noisy run reproduces its report."""
        world, truth = self.temp_dir / "world.json", self.temp_dir / "truth.csv"
        write_world(World.rectangle(8.0, 6.0, landmarks=[[4.0, 0.0, 5.0]]), world)
        write_trajectory(Trajectory(np.array([[2.0 + 0.25 * k, 3.0, 0.0] for k in range(6)])), truth)
        reports = []
        for name in ("s1.json", "s2.json"):
            path = self.temp_dir / name
            args = ["slam-sim", "--world", str(world), "--trajectory", str(truth), "--noise", "0.005",
                    "--seed", "3", "--theta0", "3e-4", "--mode", "offline", "--report", str(path)]
            assert cli_dispatch(args) == 0
            reports.append(RunReport.load(path))
        assert reports[0].without_timings() == reports[1].without_timings()
        slam = reports[0].slam or {}
        assert slam["passes"] == 2
        assert len(slam["estimated"]) == 6

    def test_slam_sim_bad_fixture(self, capsys: pytest.CaptureFixture[str]) -> None:
        """A broken world file is a runtime error."""
        world, truth = self.temp_dir / "world.json", self.temp_dir / "truth.csv"
        world.write_text('{"walls": []}')
        truth.write_text("0,0,0\n")
        assert cli_dispatch(["slam-sim", "--world", str(world), "--trajectory", str(truth)]) == 2
        assert "FixtureError" in capsys.readouterr().err

    @patch("icp_toolkit.ui.app.ReportViewer.run")
    def test_view(self, mock_run: Mock) -> None:
        """The viewer opens a saved report."""
        path = RunReport(tool="icp-toolkit", version="0.1.0", command="bench", config={}).save(
            self.temp_dir / "r.json"
        )
        assert cli_dispatch(["view", str(path)]) == 0
        mock_run.assert_called_once()

    def test_version(self) -> None:
        """--version exits cleanly."""
        assert cli_dispatch(["--version"]) == 0

    @patch("icp_toolkit.main.cli_dispatch", return_value=2)
    def test_main_exits_with_code(self, mock_dispatch: Mock) -> None:
        """main hands the dispatch result to sys.exit."""
        with pytest.raises(SystemExit) as info:
            main()
        assert info.value.code == 2
