"""Textual viewer for saved run reports."""

from typing import Optional

from textual.app import App, ComposeResult
from textual.containers import VerticalScroll
from textual.widgets import Footer, Header, Static, TabbedContent, TabPane

from ..config.settings import settings
from ..io.report import RunReport

SECTIONS = ("Summary", "Error trace", "Transform", "Timings", "SLAM")


def _summary(report: RunReport) -> str:
    lines = [f"{report.tool} {report.version}", f"command: {report.command}"]
    if report.termination is not None:
        lines.append(f"termination: {report.termination}")
    if report.iterations is not None:
        lines.append(f"iterations: {report.iterations}")
    if report.error_trace:
        lines.append(f"final error: {report.error_trace[-1]:.6g}")
    if report.correspondences is not None:
        lines.append(f"correspondences: {report.correspondences}")
    if report.slam is not None:
        lines.append(f"ATE: {report.slam['ate']:.6g} m")
    lines.append("")
    lines.append("config:")
    lines.extend(f"  {key}: {value}" for key, value in sorted(report.config.items()))
    return "\n".join(lines)


def _error_trace(report: RunReport) -> str:
    if not report.error_trace:
        return "no error trace"
    return "\n".join(f"{n:4d}  {error:.6e}" for n, error in enumerate(report.error_trace, start=1))


def _transform(report: RunReport) -> str:
    if report.rotation is None or report.translation is None:
        return "no transform"
    rows = ["R ="] + ["  " + "  ".join(f"{v: .9f}" for v in row) for row in report.rotation]
    rows.append("t = " + "  ".join(f"{v: .9f}" for v in report.translation))
    return "\n".join(rows)


def _timings(report: RunReport) -> str:
    timings = report.timings
    if timings is None and report.bench is not None:
        timings = report.bench.get("timings")
    if not timings:
        return "no timings"
    return "\n".join(f"{stage:>10}: {ms:.3f} ms" for stage, ms in timings.items())


def _slam(report: RunReport) -> str:
    slam = report.slam
    if slam is None:
        return "not a SLAM run"
    lines = [
        f"mode: {slam['mode']} / {slam['match']} ({slam['passes']} pass(es))",
        f"ATE: {slam['ate']:.6g} m",
        f"keyframes: {len(slam['keyframes'])} of {len(slam['estimated'])} frames",
    ]
    for closure in slam["loop_closures"]:
        lines.append(f"loop closure: frame {closure['frame']} -> keyframe {closure['keyframe']}, error {closure['error']:.3g}")
    failures = [f for f in slam["frames"] if "failure" in f]
    for frame in failures:
        lines.append(f"frame {frame['frame']} failed: {frame['failure']}")
    return "\n".join(lines)


_RENDERERS = {
    "Summary": _summary,
    "Error trace": _error_trace,
    "Transform": _transform,
    "Timings": _timings,
    "SLAM": _slam,
}


def render_section(report: RunReport, section: str) -> str:
    """Plain-text body of one viewer tab."""
    if section not in _RENDERERS:
        raise KeyError(f"unknown section {section!r}")
    return _RENDERERS[section](report)


class ReportViewer(App):
    """Tabbed, read-only view of one run report."""

    CSS = """
    Screen {
        layout: vertical;
    }

    .section {
        padding: 1;
    }
    """

    BINDINGS = [("q", "quit", "Quit")]

    def __init__(self, report: RunReport, title: Optional[str] = None) -> None:
        """Initialize the viewer with a loaded report."""
        super().__init__()
        self.report = report
        self.title = settings.app_name
        self.sub_title = title or report.command

    def compose(self) -> ComposeResult:
        """Create the main layout."""
        yield Header()
        with TabbedContent():
            for section in SECTIONS:
                with TabPane(section):
                    with VerticalScroll():
                        yield Static(render_section(self.report, section), classes="section", markup=False)
        yield Footer()
