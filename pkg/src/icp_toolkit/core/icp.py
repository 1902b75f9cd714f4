"""The iterative closest point driver.

Initialization, the match/solve/transform loop, the per-iteration error and the
convergence test, optionally run coarse-to-fine over a voxel pyramid.
"""

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .alignment import (
    DEFAULT_LINE_TOLERANCE,
    LineField,
    MetricKind,
    estimate_lines_2d,
    filter_line_pairs,
    solve,
)
from .correspondence import (
    DEFAULT_LEAF_SIZE,
    CorrespondenceSet,
    RejectionPolicy,
    build_index,
    match,
)
from .errors import EmptyCloud, MetricUnavailable, NoCorrespondences
from .geometry import (
    PointCloud,
    RigidTransform,
    apply,
    centroid,
    compose,
    squared_norms,
)

logger = logging.getLogger(__name__)

PYRAMID_BASE_DIVISOR = 100.0


class Termination(str, enum.Enum):
    CONVERGED = "Converged"
    STALLED = "Stalled"
    MAX_ITERATIONS = "MaxIterations"
    NO_CORRESPONDENCES = "NoCorrespondences"


@dataclass(frozen=True)
class IcpConfig:
    """Parameters of one registration run. Units: metres, squared metres for errors."""

    metric: MetricKind = MetricKind.POINT_TO_POINT
    theta0: float = 1e-10
    max_iterations: int = 100
    min_decrease: float = 1e-12
    rejection: RejectionPolicy = field(default_factory=RejectionPolicy.relative)
    align_centroids_first: bool = True
    subsample_fraction: float = 1.0
    pyramid_levels: int = 0
    seed: int = 0
    initial: Optional[RigidTransform] = None
    normal_neighbors: int = 10
    line_neighbors: int = 3
    line_tolerance: float = DEFAULT_LINE_TOLERANCE
    leaf_size: int = DEFAULT_LEAF_SIZE
    workers: int = 1

    def __post_init__(self) -> None:
        if self.theta0 < 0:
            raise ValueError("theta0 must be non-negative")
        if self.min_decrease < 0:
            raise ValueError("min_decrease must be non-negative")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must lie in (0, 1]")
        if self.pyramid_levels < 0:
            raise ValueError("pyramid_levels must be non-negative")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")

    def echo(self) -> dict[str, object]:
        """JSON-friendly view of the configuration for run reports."""
        rejection: dict[str, object] = {"trim_fraction": self.rejection.trim_fraction}
        if self.rejection.max_distance is not None:
            rejection["max_distance"] = self.rejection.max_distance
        if self.rejection.median_factor is not None:
            rejection["median_factor"] = self.rejection.median_factor
        return {
            "metric": self.metric.value,
            "theta0": self.theta0,
            "max_iterations": self.max_iterations,
            "min_decrease": self.min_decrease,
            "rejection": rejection,
            "align_centroids_first": self.align_centroids_first,
            "subsample_fraction": self.subsample_fraction,
            "pyramid_levels": self.pyramid_levels,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class IcpResult:
    """``error_trace`` holds the mean squared point distance after each iteration;
    ``objective_trace`` the residual the chosen metric minimizes (equal for
    point-to-point)."""

    transform: RigidTransform
    error_trace: list[float]
    iterations: int
    termination: Termination
    final_correspondences: CorrespondenceSet
    aligned: PointCloud
    timings: dict[str, float] = field(default_factory=dict)
    levels: list[int] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)

    @property
    def final_error(self) -> float:
        return self.error_trace[-1] if self.error_trace else math.inf

    def raise_for_termination(self) -> None:
        """Raise :class:`NoCorrespondences` if the run ended without pairs."""
        if self.termination is Termination.NO_CORRESPONDENCES:
            raise NoCorrespondences(
                f"rejection emptied the correspondence set after {self.iterations} iteration(s)"
            )


def residual_error(
    source_transformed: PointCloud, dest: PointCloud, corr: CorrespondenceSet
) -> float:
    """Mean squared distance between already-transformed source points and their matches."""
    if len(corr) == 0:
        raise NoCorrespondences("cannot compute an error without correspondences")
    diff = source_transformed.points[corr.source_indices] - dest.points[corr.dest_indices]
    return float(np.mean(squared_norms(diff)))


def metric_error(
    metric: MetricKind,
    source_transformed: PointCloud,
    dest: PointCloud,
    corr: CorrespondenceSet,
    dest_lines: Optional[LineField] = None,
) -> float:
    """Mean squared residual under ``metric`` (point-to-point: :func:`residual_error`)."""
    if metric is MetricKind.POINT_TO_POINT:
        return residual_error(source_transformed, dest, corr)
    if len(corr) == 0:
        raise NoCorrespondences("cannot compute an error without correspondences")
    diff = source_transformed.points[corr.source_indices] - dest.points[corr.dest_indices]
    if metric is MetricKind.POINT_TO_PLANE:
        if dest.normals is None:
            raise MetricUnavailable("point-to-plane needs destination normals")
        distance = np.einsum("ij,ij->i", diff, dest.normals[corr.dest_indices])
    else:
        if dest_lines is None:
            raise MetricUnavailable("point-to-line needs destination line directions")
        m = dest_lines.normals[corr.dest_indices]
        distance = diff[:, 0] * m[:, 0] + diff[:, 1] * m[:, 1]
    return float(np.mean(distance * distance))


def voxel_downsample(cloud: PointCloud, cell: float) -> PointCloud:
    """One point per occupied voxel: the centroid of its members.

    Output order follows the sorted voxel keys. Normals are averaged and
    renormalized, falling back to the first member's normal if they cancel;
    weights are averaged.
    """
    cloud.require_points()
    if cell <= 0:
        return cloud
    keys = np.floor((cloud.points - cloud.points.min(axis=0)) / cell).astype(np.int64)
    _, first, inverse, counts = np.unique(
        keys, axis=0, return_index=True, return_inverse=True, return_counts=True
    )
    inverse = inverse.reshape(-1)
    n_cells = counts.shape[0]

    def cell_mean(values: np.ndarray) -> np.ndarray:
        sums = np.zeros((n_cells,) + values.shape[1:])
        np.add.at(sums, inverse, values)
        return sums / counts.reshape((-1,) + (1,) * (values.ndim - 1))

    points = cell_mean(cloud.points)
    normals = None
    if cloud.normals is not None:
        normals = cell_mean(cloud.normals)
        lengths = np.linalg.norm(normals, axis=1)
        cancelled = lengths < 1e-9
        normals[cancelled] = cloud.normals[first[cancelled]]
        lengths[cancelled] = 1.0
        normals = normals / lengths[:, None]
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    weights = None if cloud.weights is None else cell_mean(cloud.weights)
    return PointCloud(points, normals, weights)


def build_pyramid(cloud: PointCloud, levels: int) -> list[PointCloud]:
    """Level 0 is ``cloud``; level k is a voxel downsample at ``base * 2**(k-1)``.

    The base cell is the bounding-box diagonal divided by 100.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot build a pyramid over an empty cloud")
    if levels < 1:
        raise ValueError("levels must be at least 1")
    diagonal = float(np.linalg.norm(cloud.points.max(axis=0) - cloud.points.min(axis=0)))
    base = diagonal / PYRAMID_BASE_DIVISOR
    pyramid = [cloud]
    for level in range(1, levels):
        pyramid.append(voxel_downsample(cloud, base * 2.0 ** (level - 1)))
    return pyramid


def _subsample(cloud: PointCloud, fraction: float, seed: int, level: int) -> PointCloud:
    if fraction >= 1.0:
        return cloud
    n = len(cloud)
    count = max(min(n, 3), int(round(fraction * n)))
    rng = np.random.default_rng([seed, level])
    return cloud.subset(np.sort(rng.choice(n, size=count, replace=False)))


def _line_field(dest: PointCloud, config: IcpConfig) -> Optional[LineField]:
    if config.metric is not MetricKind.POINT_TO_LINE:
        return None
    if not dest.is_planar():
        raise MetricUnavailable("point-to-line needs planar clouds (z = 0)")
    return estimate_lines_2d(dest, k=config.line_neighbors, tolerance=config.line_tolerance)


def _check_prerequisites(source: PointCloud, dest: PointCloud, config: IcpConfig) -> None:
    if len(source) == 0 or len(dest) == 0:
        raise EmptyCloud("registration needs non-empty source and destination clouds")
    if config.metric is MetricKind.POINT_TO_PLANE and dest.normals is None:
        raise MetricUnavailable("point-to-plane needs destination normals")
    if config.metric is MetricKind.POINT_TO_LINE and not (source.is_planar() and dest.is_planar()):
        raise MetricUnavailable("point-to-line needs planar clouds (z = 0)")


class _Timer:
    def __init__(self) -> None:
        self.totals: dict[str, float] = {}

    def add(self, stage: str, start: float) -> None:
        self.totals[stage] = self.totals.get(stage, 0.0) + (time.perf_counter() - start) * 1e3


def _run_level(
    source: PointCloud,
    dest: PointCloud,
    config: IcpConfig,
    transform: RigidTransform,
    timer: _Timer,
) -> tuple[RigidTransform, list[float], list[float], Termination, CorrespondenceSet]:
    start = time.perf_counter()
    index = build_index(dest, leaf_size=config.leaf_size, workers=config.workers)
    lines = _line_field(dest, config)
    timer.add("index", start)

    def correspond(current: PointCloud) -> CorrespondenceSet:
        start = time.perf_counter()
        corr = match(current, index, config.rejection)
        if lines is not None:
            corr = filter_line_pairs(current, dest, corr, lines)
            if len(corr) == 0:
                raise NoCorrespondences("no pair lies on a valid destination line")
        timer.add("match", start)
        return corr

    trace: list[float] = []
    objectives: list[float] = []
    current = apply(transform, source)
    try:
        corr = correspond(current)
    except NoCorrespondences:
        return transform, trace, objectives, Termination.NO_CORRESPONDENCES, CorrespondenceSet.empty()

    previous = math.inf
    for iteration in range(config.max_iterations):
        start = time.perf_counter()
        step = solve(config.metric, current, dest, corr, lines)
        timer.add("solve", start)

        start = time.perf_counter()
        transform = compose(step, transform)
        current = apply(transform, source)
        timer.add("transform", start)

        try:
            corr = correspond(current)
        except NoCorrespondences:
            return transform, trace, objectives, Termination.NO_CORRESPONDENCES, CorrespondenceSet.empty()
        # convergence is judged on the point distance, progress on what the solver minimizes
        error = residual_error(current, dest, corr)
        objective = metric_error(config.metric, current, dest, corr, lines)
        trace.append(error)
        objectives.append(objective)
        logger.debug(
            "iteration %d: error %.6g, objective %.6g over %d pairs", iteration + 1, error, objective, len(corr)
        )

        if error <= config.theta0:
            return transform, trace, objectives, Termination.CONVERGED, corr
        if not previous - objective > config.min_decrease:
            return transform, trace, objectives, Termination.STALLED, corr
        previous = objective
    return transform, trace, objectives, Termination.MAX_ITERATIONS, corr


def _out_of_reach(source: PointCloud, dest: PointCloud, config: IcpConfig, placement: RigidTransform) -> bool:
    """True when an absolute cap rejects every pair at the caller's own placement.

    Only consulted before a centroid shift; without one the first matching
    round sees the same placement.
    """
    cap = config.rejection.max_distance
    if cap is None or not config.align_centroids_first:
        return False
    index = build_index(dest, leaf_size=config.leaf_size, workers=config.workers)
    _, sq = index.query(apply(placement, source).points)
    return not bool(np.any(sq <= cap * cap))


def run_icp(source: PointCloud, dest: PointCloud, config: Optional[IcpConfig] = None) -> IcpResult:
    """Register ``source`` onto ``dest``.

    The loop continues while the error is above ``theta0`` and the last step
    improved the metric's objective by more than ``min_decrease`` (the first
    iteration always runs), and stops after ``max_iterations``. The returned
    transform composes the initial guess, the centroid alignment and every
    increment.

    With an absolute distance cap, clouds that have no pair within the cap at
    the initial placement end with ``NoCorrespondences`` before the centroid
    shift can pull them together.
    """
    config = config or IcpConfig()
    _check_prerequisites(source, dest, config)
    timer = _Timer()
    started = time.perf_counter()

    transform = config.initial or RigidTransform.identity()
    if _out_of_reach(source, dest, config, transform):
        logger.info(
            "icp %s: no pair within max distance %g at the initial placement",
            config.metric.value, config.rejection.max_distance,
        )
        return IcpResult(
            transform=transform,
            error_trace=[],
            iterations=0,
            termination=Termination.NO_CORRESPONDENCES,
            final_correspondences=CorrespondenceSet.empty(),
            aligned=apply(transform, source),
            timings={"total": (time.perf_counter() - started) * 1e3},
            levels=[0],
        )
    if config.align_centroids_first:
        offset = centroid(dest) - centroid(apply(transform, source))
        transform = compose(RigidTransform.from_translation(offset), transform)

    if config.pyramid_levels > 1:
        sources = build_pyramid(source, config.pyramid_levels)[::-1]
        dests = build_pyramid(dest, config.pyramid_levels)[::-1]
    else:
        sources, dests = [source], [dest]

    trace: list[float] = []
    objectives: list[float] = []
    levels: list[int] = []
    termination = Termination.MAX_ITERATIONS
    corr = CorrespondenceSet.empty()
    for level, (level_source, level_dest) in enumerate(zip(sources, dests)):
        level_source = _subsample(level_source, config.subsample_fraction, config.seed, level)
        transform, level_trace, level_objectives, termination, corr = _run_level(
            level_source, level_dest, config, transform, timer
        )
        trace.extend(level_trace)
        objectives.extend(level_objectives)
        levels.append(len(level_trace))
        if len(sources) > 1:
            logger.info(
                "pyramid level %d/%d (%d points): %s after %d iterations",
                level + 1, len(sources), len(level_source), termination.value, len(level_trace),
            )
        if termination is Termination.NO_CORRESPONDENCES:
            break

    timer.totals["total"] = (time.perf_counter() - started) * 1e3
    logger.info(
        "icp %s: %s after %d iterations, error %s",
        config.metric.value, termination.value, len(trace), trace[-1] if trace else "n/a",
    )
    return IcpResult(
        transform=transform,
        error_trace=trace,
        iterations=len(trace),
        termination=termination,
        final_correspondences=corr,
        aligned=apply(transform, source),
        timings=dict(timer.totals),
        levels=levels,
        objective_trace=objectives,
    )
