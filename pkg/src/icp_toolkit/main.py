"""Command-line entry point for icp-toolkit.

Exit codes: 0 on success, 1 on a usage error, 2 on a runtime error.
"""

import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, NoReturn, Optional, Sequence

import numpy as np

from .config.settings import settings
from .core.alignment import MetricKind, estimate_normals
from .core.bayes import filter_run
from .core.correspondence import DEFAULT_MEDIAN_FACTOR, RejectionPolicy
from .core.errors import IcpToolkitError, UsageError
from .core.geometry import PointCloud, RigidTransform, apply
from .core.icp import IcpConfig, run_icp
from .io.clouds import CloudFormat, read_cloud, write_cloud
from .io.fixtures import read_filter_steps, read_trajectory, read_world
from .io.report import RunReport
from .slam.harness import MatchMode, PipelineMode, SlamConfig, matching_config, run_slam
from .slam.world import SensorConfig

logger = logging.getLogger(__name__)

_METRICS = {"p2p": MetricKind.POINT_TO_POINT, "p2plane": MetricKind.POINT_TO_PLANE, "p2l": MetricKind.POINT_TO_LINE}
BENCH_STAGES = ("index", "match", "solve", "transform", "total")


class _Parser(argparse.ArgumentParser):
    """Argument parser that raises instead of exiting on bad input."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="icp-toolkit", description="Rigid registration, Bayes filtering and a 2D SLAM harness.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    commands = parser.add_subparsers(dest="command", required=True)

    register = commands.add_parser("register", help="register SOURCE onto DEST with ICP")
    register.add_argument("source", type=Path)
    register.add_argument("dest", type=Path)
    register.add_argument("--metric", choices=sorted(_METRICS), default="p2p")
    register.add_argument("--theta0", type=float, default=1e-10)
    register.add_argument("--max-iter", type=int, default=100)
    register.add_argument("--trim", type=float, default=0.0, help="fraction of the farthest pairs to drop")
    register.add_argument("--max-dist", type=float, default=None, help="absolute pair distance cap (m)")
    register.add_argument(
        "--median-factor",
        type=float,
        default=DEFAULT_MEDIAN_FACTOR,
        help="relative cap as a multiple of the median pair distance; 0 disables it",
    )
    register.add_argument("--pyramid", type=int, default=0)
    register.add_argument("--subsample", type=float, default=1.0)
    register.add_argument("--seed", type=int, default=0)
    register.add_argument("--align-centroids", action=argparse.BooleanOptionalAction, default=True)
    register.add_argument("--report", type=Path, default=None)
    register.add_argument("--out", type=Path, default=None, help="write the aligned source cloud here")
    register.add_argument("--format", choices=[f.value for f in CloudFormat], default=None)

    slam = commands.add_parser("slam-sim", help="run the scan-matching SLAM harness on a fixture")
    slam.add_argument("--world", type=Path, required=True)
    slam.add_argument("--trajectory", type=Path, required=True)
    slam.add_argument("--mode", choices=[m.value for m in PipelineMode], default=PipelineMode.ONLINE.value)
    slam.add_argument("--match", choices=[m.value for m in MatchMode], default=MatchMode.LANDMARK.value)
    slam.add_argument("--seed", type=int, default=0)
    slam.add_argument("--beams", type=int, default=360)
    slam.add_argument("--noise", type=float, default=0.0, help="range noise sigma (m)")
    slam.add_argument("--max-range", type=float, default=20.0)
    slam.add_argument("--no-loop-closure", action="store_true")
    slam.add_argument(
        "--theta0", type=float, default=1e-10, help="convergence threshold; noisy runs need it near the noise floor"
    )
    slam.add_argument("--report", type=Path, default=None)

    demo = commands.add_parser("filter-demo", help="run the histogram Bayes filter over a steps fixture")
    demo.add_argument("--cells", type=int, default=None)
    demo.add_argument("--steps", type=Path, required=True)
    demo.add_argument("--report", type=Path, default=None)

    bench = commands.add_parser("bench", help="time registration on seeded synthetic clouds")
    bench.add_argument("--size", type=int, default=1000)
    bench.add_argument("--reps", type=int, default=5)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--report", type=Path, default=None)

    view = commands.add_parser("view", help="browse a saved run report")
    view.add_argument("report", type=Path)
    return parser


def _workers() -> int:
    return settings.workers if settings.workers >= 1 or settings.workers == -1 else 1


def _require(condition: bool, flag: str, message: str) -> None:
    if not condition:
        raise UsageError(f"{flag}: {message}")


def _emit(report: RunReport, destination: Optional[Path]) -> None:
    """Save to ``destination``, else the configured report directory, else stdout."""
    if destination is None and settings.report_dir is not None:
        destination = settings.report_dir / f"{report.command}-report.json"
    if destination is None:
        sys.stdout.write(report.serialize())
        return
    report.save(destination)


def _report(command: str, config: dict[str, Any]) -> RunReport:
    return RunReport(tool=settings.app_name, version=settings.app_version, command=command, config=config)


def _register(args: argparse.Namespace) -> int:
    _require(args.max_iter >= 1, "--max-iter", "must be at least 1")
    _require(0.0 <= args.trim < 1.0, "--trim", "must lie in [0, 1)")
    _require(args.max_dist is None or args.max_dist >= 0, "--max-dist", "must be non-negative")
    _require(args.median_factor >= 0, "--median-factor", "must be non-negative")
    _require(args.pyramid >= 0, "--pyramid", "must be non-negative")
    _require(0.0 < args.subsample <= 1.0, "--subsample", "must lie in (0, 1]")
    _require(args.seed >= 0, "--seed", "must be non-negative")
    _require(args.theta0 >= 0, "--theta0", "must be non-negative")

    source = read_cloud(args.source)
    dest = read_cloud(args.dest)
    metric = _METRICS[args.metric]
    if metric is MetricKind.POINT_TO_PLANE and dest.normals is None:
        logger.info("destination has no normals; estimating them")
        dest = estimate_normals(dest)

    rejection = RejectionPolicy(
        max_distance=args.max_dist,
        median_factor=args.median_factor or None,
        trim_fraction=args.trim,
    )
    config = IcpConfig(
        metric=metric,
        theta0=args.theta0,
        max_iterations=args.max_iter,
        rejection=rejection,
        align_centroids_first=args.align_centroids,
        subsample_fraction=args.subsample,
        pyramid_levels=args.pyramid,
        seed=args.seed,
        workers=_workers(),
    )
    result = run_icp(source, dest, config)
    result.raise_for_termination()

    if args.out is not None:
        write_cloud(result.aligned, args.out, CloudFormat(args.format) if args.format else None)
    echo = config.echo()
    echo.update(source=str(args.source), dest=str(args.dest))
    _emit(RunReport.from_icp(settings.app_name, settings.app_version, echo, result), args.report)
    return 0


def _slam_sim(args: argparse.Namespace) -> int:
    _require(args.beams >= 1, "--beams", "must be positive")
    _require(args.noise >= 0, "--noise", "must be non-negative")
    _require(args.max_range > 0, "--max-range", "must be positive")
    _require(args.seed >= 0, "--seed", "must be non-negative")
    _require(args.theta0 >= 0, "--theta0", "must be non-negative")

    world = read_world(args.world)
    truth = read_trajectory(args.trajectory)
    sensor = SensorConfig(n_beams=args.beams, max_range=args.max_range, noise_sigma=args.noise, seed=args.seed)
    icp_config = IcpConfig(theta0=args.theta0, seed=args.seed, workers=_workers())
    slam_config = SlamConfig(
        mode=MatchMode(args.match),
        pipeline=PipelineMode(args.mode),
        loop_closure=not args.no_loop_closure,
    )
    result = run_slam(world, truth, sensor, icp_config, slam_config)
    logger.info("slam-sim %s/%s: ATE %.6g m, %d loop closure(s)", args.mode, args.match, result.ate, len(result.loop_closures))

    report = _report(
        "slam-sim",
        {
            "world": str(args.world),
            "trajectory": str(args.trajectory),
            "mode": args.mode,
            "match": args.match,
            "seed": args.seed,
            "beams": args.beams,
            "noise": args.noise,
            "max_range": args.max_range,
            "loop_closure": not args.no_loop_closure,
            "icp": matching_config(icp_config, slam_config, sensor).echo(),
        },
    )
    report.slam = result.to_dict()
    _emit(report, args.report)
    return 0


def _filter_demo(args: argparse.Namespace) -> int:
    _require(args.cells is None or args.cells >= 1, "--cells", "must be positive")
    fixture = read_filter_steps(args.steps, cells=args.cells)
    beliefs = filter_run(fixture.initial, fixture.steps, fixture.motion, fixture.measurement)
    for step, belief in enumerate(beliefs, start=1):
        print(f"step {step}: " + " ".join(f"{p:.6f}" for p in belief.cells))

    report = _report("filter-demo", {"steps": str(args.steps), "shape": list(fixture.initial.shape)})
    report.beliefs = [belief.cells.tolist() for belief in beliefs]
    _emit(report, args.report)
    return 0


def synthetic_cloud(size: int, rng: np.random.Generator) -> PointCloud:
    """Anisotropic Gaussian blob, so registration has a unique answer."""
    return PointCloud(rng.normal(size=(size, 3)) * np.array([1.0, 0.6, 0.3]))


def random_transform(rng: np.random.Generator, max_angle: float, max_shift: float) -> RigidTransform:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    k = np.array([[0.0, -axis[2], axis[1]], [axis[2], 0.0, -axis[0]], [-axis[1], axis[0], 0.0]])
    rotation = np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)
    shift = rng.normal(size=3)
    shift *= rng.uniform(0.0, max_shift) / np.linalg.norm(shift)
    return RigidTransform(rotation, shift)


def _bench(args: argparse.Namespace) -> int:
    _require(args.size >= 3, "--size", "must be at least 3")
    _require(args.reps >= 1, "--reps", "must be positive")
    _require(args.seed >= 0, "--seed", "must be non-negative")

    rng = np.random.default_rng(args.seed)
    config = IcpConfig(rejection=RejectionPolicy.none(), seed=args.seed, workers=_workers())
    totals = {stage: 0.0 for stage in BENCH_STAGES}
    iterations = []
    for _ in range(args.reps):
        source = synthetic_cloud(args.size, rng)
        dest = apply(random_transform(rng, math.radians(30.0), 0.5), source)
        result = run_icp(source, dest, config)
        iterations.append(result.iterations)
        for stage in BENCH_STAGES:
            totals[stage] += result.timings.get(stage, 0.0)
    means = {stage: totals[stage] / args.reps for stage in BENCH_STAGES}
    for stage in BENCH_STAGES:
        print(f"{stage:>10}: {means[stage]:.3f} ms")

    report = _report("bench", {"size": args.size, "reps": args.reps, "seed": args.seed, "icp": config.echo()})
    report.bench = {"iterations": iterations, "timings": means}
    _emit(report, args.report)
    return 0


def _view(args: argparse.Namespace) -> int:
    from .ui.app import ReportViewer

    ReportViewer(RunReport.load(args.report), title=str(args.report)).run()
    return 0


_HANDLERS = {
    "register": _register,
    "slam-sim": _slam_sim,
    "filter-demo": _filter_demo,
    "bench": _bench,
    "view": _view,
}


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Parse ``argv`` and run one subcommand; returns the process exit code."""
    logging.basicConfig(
        level=settings.effective_log_level,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not settings.validate():
        logger.warning("ignoring invalid ICP_TOOLKIT_* settings")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (IcpToolkitError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
