"""World, trajectory and filter-step fixture files."""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Hashable, Optional, Union

import numpy as np

from ..core.bayes import GridBelief, MeasurementModel, MotionModel
from ..core.errors import CloudIoError, FixtureError, IcpToolkitError, ParseError
from ..slam.world import Trajectory, World
from .clouds import read_text

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _write_text(path: PathLike, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CloudIoError(f"cannot write {path}: {exc}") from exc


def _load_json(path: PathLike) -> Any:
    try:
        return json.loads(read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from exc


def read_world(path: PathLike) -> World:
    data = _load_json(path)
    if not isinstance(data, dict) or "walls" not in data:
        raise FixtureError(f"{path}: a world needs a 'walls' list")
    try:
        walls = np.array(data["walls"], dtype=np.float64)
        landmarks = np.array(data.get("landmarks", []), dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FixtureError(f"{path}: {exc}") from exc
    if walls.ndim != 2 or walls.shape[1] != 4:
        raise FixtureError(f"{path}: walls must be [x1, y1, x2, y2] rows")
    if landmarks.size and (landmarks.ndim != 2 or landmarks.shape[1] != 3):
        raise FixtureError(f"{path}: landmarks must be [x, y, confidence] rows")
    return World(walls, landmarks.reshape(-1, 3))


def write_world(world: World, path: PathLike) -> None:
    data = {"walls": world.walls.tolist(), "landmarks": world.landmarks.tolist()}
    _write_text(path, json.dumps(data, indent=2) + "\n")


def read_trajectory(path: PathLike) -> Trajectory:
    """CSV rows ``x,y,theta``; an optional header row and ``#`` comments are skipped."""
    rows = []
    for number, raw in enumerate(read_text(path).splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        values = [v.strip() for v in line.split(",")]
        if not rows and values == ["x", "y", "theta"]:
            continue
        if len(values) != 3:
            raise ParseError(f"expected x,y,theta, found {len(values)} values", line=number)
        try:
            rows.append([float(v) for v in values])
        except ValueError as exc:
            raise ParseError(f"not a number: {exc}", line=number) from exc
    if not rows:
        raise FixtureError(f"{path}: trajectory has no poses")
    return Trajectory(np.array(rows))


def write_trajectory(trajectory: Trajectory, path: PathLike) -> None:
    lines = ["x,y,theta"] + [",".join("%.17g" % v for v in pose) for pose in trajectory.poses]
    _write_text(path, "\n".join(lines) + "\n")


@dataclass(frozen=True)
class ExplicitLikelihood:
    """A per-cell likelihood vector given directly in the fixture."""

    values: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class FilterFixture:
    """A Bayes filter scenario: initial belief, models and (command, observation) steps."""

    initial: GridBelief
    motion: MotionModel
    measurement: MeasurementModel
    steps: list[tuple[Hashable, Any]]


def _offset(key: str) -> Union[int, tuple[int, int]]:
    parts = [p.strip() for p in key.strip("()[] ").split(",")]
    try:
        values = [int(p) for p in parts]
    except ValueError as exc:
        raise FixtureError(f"motion noise offset {key!r} is not an integer") from exc
    return values[0] if len(values) == 1 else (values[0], values[1])


def _command(value: Any) -> Hashable:
    return tuple(int(v) for v in value) if isinstance(value, list) else int(value)


def read_filter_steps(path: PathLike, cells: Optional[int] = None) -> FilterFixture:
    """Load a filter fixture.

    Steps carry either an ``observation`` (a position in metres, scored by a
    Gaussian of ``measurement_sigma``) or an explicit per-cell ``likelihood``.
    ``cells`` sets a 1D grid size when the file gives no ``shape``.
    """
    data = _load_json(path)
    if not isinstance(data, dict) or not isinstance(data.get("steps"), list):
        raise FixtureError(f"{path}: a filter fixture needs a 'steps' list")
    shape_field = data.get("shape", cells)
    if shape_field is None:
        raise FixtureError(f"{path}: grid size missing (give 'shape' or --cells)")
    shape = (int(shape_field),) if isinstance(shape_field, int) else tuple(int(n) for n in shape_field)
    cell_size = float(data.get("cell_size", 1.0))
    sigma = data.get("measurement_sigma")

    try:
        noise = {_offset(k): float(p) for k, p in data.get("motion_noise", {"0": 1.0}).items()}
        motion = MotionModel.from_noise(noise)
        gaussian = MeasurementModel.gaussian(shape, cell_size, float(sigma)) if sigma is not None else None
        if "initial" in data:
            initial = GridBelief.from_mass(np.asarray(data["initial"], dtype=np.float64), shape, cell_size)
        else:
            initial = GridBelief.uniform(shape, cell_size)
    except IcpToolkitError as exc:
        raise FixtureError(f"{path}: {exc}") from exc

    steps: list[tuple[Hashable, Any]] = []
    for n, item in enumerate(data["steps"]):
        if "command" not in item:
            raise FixtureError(f"{path}: step {n} has no command")
        command = _command(item["command"])
        if "likelihood" in item:
            steps.append((command, ExplicitLikelihood(tuple(float(v) for v in item["likelihood"]))))
        elif "observation" in item:
            if gaussian is None:
                raise FixtureError(f"{path}: step {n} observes a position but measurement_sigma is unset")
            observation = item["observation"]
            steps.append((command, tuple(observation) if isinstance(observation, list) else float(observation)))
        else:
            raise FixtureError(f"{path}: step {n} needs an observation or a likelihood")

    def likelihood(observation: Any) -> np.ndarray:
        if isinstance(observation, ExplicitLikelihood):
            return np.asarray(observation.values, dtype=np.float64)
        if gaussian is None:
            raise FixtureError("position observation without a measurement model")
        return gaussian.likelihood_fn(observation)

    logger.debug("loaded %d filter steps over a %s grid", len(steps), shape)
    return FilterFixture(initial, motion, MeasurementModel(likelihood), steps)
