"""
Tabulated goal functions for distillation

A goal function is a reference mapping from heuristic inputs to outputs,
stored as values on a rectangular grid and evaluated by multilinear
interpolation. Points outside the grid are clipped onto its boundary.
"""

import json
import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import Enum, unique
from functools import cache
from importlib import resources
from pathlib import Path
from typing import Self

import numpy as np
import numpy.typing as npt
from scipy.interpolate import RegularGridInterpolator

from amd.mechanisms.outcome import FloatArray

logger = logging.getLogger(__name__)

DEFAULT_GOAL_RESOURCE = "cavallo_goal.json"


def _mesh(grid: Sequence[Sequence[float]]) -> FloatArray:
    axes = np.meshgrid(*grid, indexing="ij")
    return np.stack([axis.ravel() for axis in axes], axis=1)


class GoalFunctionError(ValueError):
    """Exception raised when a goal function table is malformed"""


@unique
class Metric(str, Enum):
    L1 = "L1"
    L2 = "L2"

    def distance(self, left: FloatArray, right: FloatArray) -> FloatArray:
        """Per-sample distance; vector outputs are summed over components"""
        difference = left - right
        per_component = np.abs(difference) if self is Metric.L1 else difference**2
        if per_component.ndim == 1:
            return per_component
        return per_component.sum(axis=1)


@dataclass(frozen=True, eq=False)
class GoalFunction:
    grid: tuple[tuple[float, ...], ...]
    values: FloatArray
    metric_hint: Metric | None = None
    _interpolator: RegularGridInterpolator = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.grid:
            raise GoalFunctionError("Goal grid has no dimensions")
        for dimension, points in enumerate(self.grid):
            if len(points) < 2:
                raise GoalFunctionError(f"Goal grid dimension {dimension} is too short")
            if np.any(np.diff(points) <= 0):
                raise GoalFunctionError(
                    f"Goal grid dimension {dimension} is not strictly increasing"
                )

        expected = tuple(len(points) for points in self.grid)
        leading = self.values.shape[: len(expected)]
        if leading != expected or self.values.ndim > len(expected) + 1:
            raise GoalFunctionError(
                f"Goal values have shape {self.values.shape}, grid needs {expected}"
            )
        if not np.all(np.isfinite(self.values)):
            raise GoalFunctionError("Goal values must be finite")

        object.__setattr__(
            self,
            "_interpolator",
            RegularGridInterpolator(self.grid, self.values, method="linear"),
        )

    @property
    def input_dimension(self) -> int:
        return len(self.grid)

    @property
    def output_length(self) -> int | None:
        """Length of vector outputs, None for scalar goals"""
        if self.values.ndim == len(self.grid):
            return None
        return int(self.values.shape[-1])

    def __call__(self, points: npt.ArrayLike) -> FloatArray:
        """Interpolate at points of shape (B, input_dimension)"""
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.input_dimension:
            raise GoalFunctionError(
                f"Expected points of shape (B, {self.input_dimension}), "
                f"got {points.shape}"
            )
        lower = np.array([dimension[0] for dimension in self.grid])
        upper = np.array([dimension[-1] for dimension in self.grid])
        return self._interpolator(np.clip(points, lower, upper))

    def grid_points(self) -> FloatArray:
        """Every grid point, shape (product of grid sizes, input_dimension)"""
        return _mesh(self.grid)

    @classmethod
    def from_dict(cls, source: Mapping[str, object]) -> Self:
        unknown = set(source) - {"grid", "values", "metric_hint"}
        if unknown:
            raise GoalFunctionError(f"Unknown goal keys {sorted(unknown)}")

        grid = source.get("grid")
        if not isinstance(grid, list) or not all(isinstance(g, list) for g in grid):
            raise GoalFunctionError("Goal 'grid' must be a list of lists")

        try:
            values = np.asarray(source.get("values"), dtype=float)
            points = tuple(tuple(float(x) for x in dimension) for dimension in grid)
        except (TypeError, ValueError) as e:
            raise GoalFunctionError("Goal table must contain numbers") from e

        hint = source.get("metric_hint")
        if hint is not None and hint not in {metric.value for metric in Metric}:
            raise GoalFunctionError(f"Unknown metric hint {hint!r}")

        return cls(
            grid=points,
            values=values,
            metric_hint=None if hint is None else Metric(hint),
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "grid": [list(points) for points in self.grid],
            "values": self.values.tolist(),
            "metric_hint": None if self.metric_hint is None else self.metric_hint.value,
        }


def load_goal_function(path: Path) -> GoalFunction:
    with path.open("r") as f:
        try:
            source = json.load(f)
        except json.JSONDecodeError as e:
            raise GoalFunctionError(f"Failed to parse goal function at {path=}") from e

    if not isinstance(source, dict):
        raise GoalFunctionError("Goal function file must contain a mapping")

    goal = GoalFunction.from_dict(source)
    logger.debug(f"Loaded goal function {goal.values.shape} from {path}")
    return goal


@cache
def default_goal_function() -> GoalFunction:
    """The shipped table of 0.5 * min(others_bids) for three other bidders"""
    text = resources.files("amd.data").joinpath(DEFAULT_GOAL_RESOURCE).read_text()
    return GoalFunction.from_dict(json.loads(text))


def tabulate(
    function: Callable[[FloatArray], FloatArray],
    grid: Sequence[Sequence[float]],
    metric_hint: Metric | None = None,
) -> GoalFunction:
    """Build a goal function by evaluating function on every grid point"""
    points = tuple(tuple(float(x) for x in dimension) for dimension in grid)
    shape = tuple(len(dimension) for dimension in points)
    values = np.asarray(function(_mesh(points)), dtype=float)
    return GoalFunction(
        grid=points,
        values=values.reshape(shape + values.shape[1:]),
        metric_hint=metric_hint,
    )
