"""Discrete (histogram) recursive Bayes filter over a 1D or 2D grid.

Prediction convolves the belief with a finite shift kernel; mass that would leave
the grid is absorbed by the boundary cell. Correction multiplies by the
measurement likelihood and renormalizes (the normalization factor eta).
"""

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import InvalidBelief, InvalidModel, ZeroLikelihood

NORMALIZATION_TOLERANCE = 1e-12

Offset = Union[int, tuple[int, int]]
Kernel = Mapping[Offset, float]


def _offset_array(offset: Offset, ndim: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(offset, dtype=np.intp))
    if arr.shape != (ndim,):
        raise InvalidModel(f"kernel offset {offset!r} does not match a {ndim}D grid")
    return arr


@dataclass(frozen=True, eq=False)
class GridBelief:
    """Normalized probability mass over grid cells (row-major for 2D grids)."""

    cells: np.ndarray
    shape: tuple[int, ...] = ()
    cell_size: float = 1.0

    def __post_init__(self) -> None:
        cells = np.array(self.cells, dtype=np.float64, copy=True)
        shape = tuple(self.shape) or cells.shape
        if len(shape) not in (1, 2):
            raise InvalidBelief(f"grid must be 1D or 2D, got shape {shape}")
        cells = cells.reshape(-1)
        if cells.size != math.prod(shape) or cells.size == 0:
            raise InvalidBelief(f"{cells.size} cells do not fill a grid of shape {shape}")
        if not np.all(np.isfinite(cells)) or np.any(cells < 0):
            raise InvalidBelief("belief entries must be finite and non-negative")
        if abs(float(cells.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
            raise InvalidBelief(f"belief sums to {cells.sum()!r}, not 1")
        if self.cell_size <= 0:
            raise InvalidBelief("cell_size must be positive")
        cells.flags.writeable = False
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "shape", shape)

    @classmethod
    def from_mass(
        cls, mass: np.ndarray, shape: Sequence[int], cell_size: float = 1.0
    ) -> "GridBelief":
        """Normalize non-negative ``mass`` into a belief."""
        total = float(np.sum(mass))
        if total <= 0:
            raise InvalidBelief("cannot normalize a belief with no mass")
        return cls(np.asarray(mass, dtype=np.float64).reshape(-1) / total, tuple(shape), cell_size)

    @classmethod
    def uniform(cls, shape: Union[int, Sequence[int]], cell_size: float = 1.0) -> "GridBelief":
        dims = (shape,) if isinstance(shape, int) else tuple(shape)
        n = math.prod(dims)
        return cls(np.full(n, 1.0 / n), dims, cell_size)

    @classmethod
    def point_mass(
        cls, index: Offset, shape: Union[int, Sequence[int]], cell_size: float = 1.0
    ) -> "GridBelief":
        dims = (shape,) if isinstance(shape, int) else tuple(shape)
        cells = np.zeros(dims)
        cells[index] = 1.0
        return cls(cells.reshape(-1), dims, cell_size)

    @property
    def grid(self) -> np.ndarray:
        """Cells reshaped to the grid."""
        return self.cells.reshape(self.shape)

    def argmax(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(np.argmax(self.cells)), self.shape))

    def mean_position(self) -> np.ndarray:
        """Expected cell-center position in metres, one entry per grid axis."""
        grid = self.grid
        centers = [(np.arange(n) + 0.5) * self.cell_size for n in self.shape]
        if len(self.shape) == 1:
            return np.array([float(np.dot(grid, centers[0]))])
        return np.array(
            [float(np.dot(grid.sum(axis=1), centers[0])), float(np.dot(grid.sum(axis=0), centers[1]))]
        )


@dataclass(frozen=True)
class MotionModel:
    """p(x_t | u_t, x_{t-1}) as a finite shift kernel per command.

    ``kernels`` maps a command to its kernel. When ``noise`` is set, an integer
    (or integer pair) command ``u`` not in ``kernels`` gets the noise kernel
    shifted by ``u``.
    """

    kernels: Mapping[Hashable, Kernel] = field(default_factory=dict)
    noise: Optional[Kernel] = None

    def __post_init__(self) -> None:
        for command, kernel in self.kernels.items():
            _validate_kernel(kernel, f"kernel for command {command!r}")
        if self.noise is not None:
            _validate_kernel(self.noise, "noise kernel")

    @classmethod
    def from_noise(cls, noise: Kernel) -> "MotionModel":
        return cls(noise=dict(noise))

    def kernel(self, command: Hashable) -> Kernel:
        if command in self.kernels:
            return self.kernels[command]
        if self.noise is None:
            raise InvalidModel(f"no motion kernel for command {command!r}")
        if isinstance(command, tuple):
            du, dv = (int(c) for c in command)
            return {(int(o[0]) + du, int(o[1]) + dv): p for o, p in self.noise.items()}  # type: ignore[index]
        return {int(o) + int(command): p for o, p in self.noise.items()}  # type: ignore[call-overload,arg-type]


def _validate_kernel(kernel: Kernel, name: str) -> None:
    probabilities = np.array(list(kernel.values()), dtype=np.float64)
    if probabilities.size == 0 or np.any(probabilities < 0):
        raise InvalidModel(f"{name} must be non-empty with non-negative probabilities")
    if abs(float(probabilities.sum()) - 1.0) > NORMALIZATION_TOLERANCE:
        raise InvalidModel(f"{name} sums to {probabilities.sum()!r}, not 1")


@dataclass(frozen=True)
class MeasurementModel:
    """p(z_t | x_t): maps an observation to a non-negative likelihood over cells."""

    likelihood_fn: Callable[[Any], np.ndarray]

    @classmethod
    def from_table(cls, table: Mapping[Hashable, Sequence[float]]) -> "MeasurementModel":
        frozen = {key: np.asarray(values, dtype=np.float64) for key, values in table.items()}

        def lookup(observation: Any) -> np.ndarray:
            if observation not in frozen:
                raise InvalidModel(f"observation {observation!r} is not in the likelihood table")
            return frozen[observation]

        return cls(lookup)

    @classmethod
    def gaussian(
        cls, shape: Union[int, Sequence[int]], cell_size: float, sigma: float
    ) -> "MeasurementModel":
        """Observation is a measured position in metres (a pair for 2D grids)."""
        dims = (shape,) if isinstance(shape, int) else tuple(shape)
        if sigma <= 0:
            raise InvalidModel("sigma must be positive")
        axes = [(np.arange(n) + 0.5) * cell_size for n in dims]
        centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(dims))

        def likelihood(observation: Any) -> np.ndarray:
            z = np.atleast_1d(np.asarray(observation, dtype=np.float64))
            d2 = np.sum((centers - z) ** 2, axis=1)
            return np.exp(-0.5 * d2 / sigma**2)

        return cls(likelihood)

    def likelihood(self, observation: Any, size: int) -> np.ndarray:
        values = np.asarray(self.likelihood_fn(observation), dtype=np.float64).reshape(-1)
        if values.size != size:
            raise InvalidModel(f"likelihood has {values.size} entries for {size} cells")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidModel("likelihood must be finite and non-negative")
        if not np.any(values > 0):
            raise InvalidModel(f"likelihood of {observation!r} is zero over the whole grid")
        return values


def _shift_targets(shape: tuple[int, ...], offset: Offset) -> np.ndarray:
    """Flat destination index of every cell under ``offset``, clamped at the walls."""
    delta = _offset_array(offset, len(shape))
    coords = np.indices(shape).reshape(len(shape), -1)
    moved = np.clip(coords + delta[:, None], 0, np.array(shape)[:, None] - 1)
    return np.ravel_multi_index(tuple(moved), shape)


def predict(belief: GridBelief, motion: MotionModel, command: Hashable) -> GridBelief:
    """Motion update: sum over x' of p(x | u, x') * mu(x')."""
    mass = np.zeros_like(belief.cells)
    for offset, probability in motion.kernel(command).items():
        if probability == 0:
            continue
        np.add.at(mass, _shift_targets(belief.shape, offset), probability * belief.cells)
    return GridBelief.from_mass(mass, belief.shape, belief.cell_size)


def correct(belief: GridBelief, meas: MeasurementModel, observation: Any) -> GridBelief:
    """Measurement update: eta * p(z | x) * mu(x)."""
    product = meas.likelihood(observation, belief.cells.size) * belief.cells
    total = float(product.sum())
    if total <= 0:
        raise ZeroLikelihood(f"observation {observation!r} is impossible under the current belief")
    return GridBelief(product / total, belief.shape, belief.cell_size)


def filter_run(
    initial: GridBelief,
    steps: Sequence[tuple[Hashable, Any]],
    motion: MotionModel,
    meas: MeasurementModel,
) -> list[GridBelief]:
    """Alternate predict/correct per (command, observation); one posterior per step."""
    beliefs = []
    belief = initial
    for command, observation in steps:
        belief = correct(predict(belief, motion, command), meas, observation)
        beliefs.append(belief)
    return beliefs


def transition_matrix(
    motion: MotionModel, command: Hashable, shape: Union[int, Sequence[int]]
) -> np.ndarray:
    """Dense P[x, x'] = p(x | u, x') for the absorbing-wall grid."""
    dims = (shape,) if isinstance(shape, int) else tuple(shape)
    n = math.prod(dims)
    matrix = np.zeros((n, n))
    sources = np.arange(n)
    for offset, probability in motion.kernel(command).items():
        np.add.at(matrix, (_shift_targets(dims, offset), sources), probability)
    return matrix
