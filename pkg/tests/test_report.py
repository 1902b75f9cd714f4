"""Tests for JSON run reports."""

import json
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from icp_toolkit.core.errors import CloudIoError, ParseError
from icp_toolkit.core.geometry import PointCloud
from icp_toolkit.core.icp import run_icp
from icp_toolkit.io.report import RunReport


def register_report() -> RunReport:
    cloud = PointCloud(np.random.default_rng(0).normal(size=(50, 3)))
    return RunReport.from_icp("icp-toolkit", "0.1.0", {"metric": "p2p"}, run_icp(cloud, cloud))


class TestRunReport:
    """Test cases for report serialization."""

    def setup_method(self) -> None:
        """Set up test environment."""
        self.temp_dir = Path(tempfile.mkdtemp())

    def teardown_method(self) -> None:
        """Clean up test environment."""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_from_icp(self) -> None:
        """A registration fills the transform, trace and timings."""
        report = register_report()
        assert report.command == "register"
        assert report.termination == "Converged"
        assert len(report.rotation or []) == 3
        assert report.iterations == len(report.error_trace or [])
        assert report.correspondences == 50

    def test_unset_sections_are_omitted(self) -> None:
        """None-valued keys never reach the JSON."""
        report = RunReport(tool="icp-toolkit", version="0.1.0", command="bench", config={})
        assert set(json.loads(report.serialize())) == {"tool", "version", "command", "config"}

    def test_keys_are_sorted(self) -> None:
        """Serialization is canonical."""
        text = register_report().serialize()
        keys = list(json.loads(text))
        assert keys == sorted(keys)

    def test_parse_reverses_serialize(self) -> None:
        """Parsing the JSON gives an equal report."""
        report = register_report()
        assert RunReport.parse(report.serialize()) == report

    def test_save_and_load(self) -> None:
        """Reports are written atomically, creating parent directories."""
        report = register_report()
        path = report.save(self.temp_dir / "nested" / "report.json")
        assert path.exists()
        assert not path.with_suffix(".json.tmp").exists()
        assert RunReport.load(path) == report

    def test_load_missing(self) -> None:
        """A missing report is an I/O error."""
        with pytest.raises(CloudIoError):
            RunReport.load(self.temp_dir / "missing.json")

    def test_parse_rejects_unknown_keys(self) -> None:
        """Only known sections are accepted."""
        with pytest.raises(ParseError):
            RunReport.parse('{"tool": "x", "version": "1", "command": "c", "config": {}, "extra": 1}')

    def test_parse_rejects_incomplete_report(self) -> None:
        """Required fields must be present."""
        with pytest.raises(ParseError):
            RunReport.parse('{"tool": "x"}')

    def test_parse_rejects_bad_json(self) -> None:
        """Broken JSON reports its line."""
        with pytest.raises(ParseError) as info:
            RunReport.parse('{\n"tool":\n')
        assert info.value.line is not None

    def test_without_timings(self) -> None:
        """Wall-clock fields are stripped everywhere they occur."""
        report = RunReport(
            tool="icp-toolkit",
            version="0.1.0",
            command="slam-sim",
            config={},
            timings={"total": 1.0},
            bench={"iterations": [3], "timings": {"total": 2.0}},
            slam={"frames": [{"frame": 0, "iterations": 0, "latency_ms": 4.0}]},
        )
        data = report.without_timings()
        assert "timings" not in data
        assert data["bench"] == {"iterations": [3]}
        assert data["slam"]["frames"] == [{"frame": 0, "iterations": 0}]
