"""
Bidder value distributions

Marginals (uniform, Beta and piecewise uniform) describe one bidder's value;
the grid distribution describes two correlated bidders whose joint density is
constant on each cell of a square grid over [0, 1]².
"""

import json
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from functools import cache, cached_property
from importlib import resources
from pathlib import Path
from typing import Self, TypeAlias

import numpy as np
import numpy.typing as npt
import scipy.stats
from scipy.spatial import ConvexHull, QhullError

logger = logging.getLogger(__name__)

FloatArray: TypeAlias = npt.NDArray[np.float64]
ArrayOrFloat: TypeAlias = float | npt.ArrayLike

IRONING_RESOLUTION = 4001


class DistributionError(ValueError):
    """Base class for errors raised by distribution queries"""


class OutOfSupportError(DistributionError):
    """Exception raised when a value lies outside the distribution's support"""


class DegenerateDistributionError(DistributionError):
    """Exception raised when a quantity is undefined for the distribution"""


class InvalidDistributionError(ValueError):
    """Exception raised when a distribution is constructed with invalid parameters"""


@dataclass(frozen=True, slots=True)
class Uniform:
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self) -> None:
        if not self.lo < self.hi:
            raise InvalidDistributionError(
                f"Empty uniform support [{self.lo}, {self.hi}]"
            )


@dataclass(frozen=True, slots=True)
class Beta:
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise InvalidDistributionError(
                f"Beta parameters must be positive, got {self.alpha}, {self.beta}"
            )


@dataclass(frozen=True)
class PiecewiseUniform:
    """Density densities[i] on [breakpoints[i], breakpoints[i + 1])"""

    breakpoints: tuple[float, ...]
    densities: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.breakpoints) != len(self.densities) + 1:
            raise InvalidDistributionError("Need one more breakpoint than densities")
        if any(b1 >= b2 for b1, b2 in zip(self.breakpoints, self.breakpoints[1:])):
            raise InvalidDistributionError("Breakpoints must be strictly increasing")
        if any(density < 0 for density in self.densities):
            raise InvalidDistributionError("Densities must be nonnegative")
        if abs(self.cumulative[-1] - 1) > 1e-6:
            raise InvalidDistributionError(
                f"Densities integrate to {self.cumulative[-1]}, not 1"
            )

    @cached_property
    def cumulative(self) -> FloatArray:
        """Probability mass to the left of each breakpoint"""
        widths = np.diff(np.asarray(self.breakpoints, dtype=float))
        masses = widths * np.asarray(self.densities, dtype=float)
        return np.concatenate(([0.0], np.cumsum(masses)))


MarginalDistribution: TypeAlias = Uniform | Beta | PiecewiseUniform


@dataclass(frozen=True)
class GridJointDistribution:
    """
    Two correlated bidders on a square grid over [0, 1]²

    Row i of cells spans bidder 1's band [side*i, side*(i+1)), column j spans
    bidder 2's. Cells are half-open except the last row/column.
    """

    cells: tuple[tuple[float, ...], ...]
    side: float = 0.2

    def __post_init__(self) -> None:
        size = len(self.cells)
        if size == 0 or any(len(row) != size for row in self.cells):
            raise InvalidDistributionError("Grid cells must form a square matrix")
        if abs(size * self.side - 1) > 1e-9:
            raise InvalidDistributionError(
                f"{size} cells of side {self.side} don't cover [0, 1]"
            )
        if any(value < 0 for row in self.cells for value in row):
            raise InvalidDistributionError("Grid cells must be nonnegative")
        if self.normalizer <= 0:
            raise InvalidDistributionError("Grid cells must not all be zero")

    @cached_property
    def matrix(self) -> FloatArray:
        return np.asarray(self.cells, dtype=float)

    @property
    def size(self) -> int:
        return len(self.cells)

    @cached_property
    def normalizer(self) -> float:
        """Z, so that matrix / Z is a density"""
        return float(self.side**2 * np.asarray(self.cells, dtype=float).sum())

    @cached_property
    def cell_probabilities(self) -> FloatArray:
        probabilities = self.matrix * self.side**2 / self.normalizer
        return probabilities / probabilities.sum()

    def to_dict(self) -> dict[str, object]:
        return {"cells": [list(row) for row in self.cells], "side": self.side}

    @classmethod
    def from_dict(cls, source: Mapping[str, object]) -> Self:
        cells = source.get("cells")
        side = source.get("side", 0.2)
        if not isinstance(cells, list) or not all(
            isinstance(row, list)
            and all(isinstance(value, (int, float)) for value in row)
            for row in cells
        ):
            raise InvalidDistributionError(
                "Grid 'cells' must be a list of number lists"
            )
        if not isinstance(side, (int, float)):
            raise InvalidDistributionError("Grid 'side' must be a number")
        return cls(
            cells=tuple(tuple(float(value) for value in row) for row in cells),
            side=float(side),
        )


Distribution: TypeAlias = MarginalDistribution | GridJointDistribution


@dataclass(frozen=True)
class SampleBatch:
    profiles: FloatArray  # (batch_size, n_bidders)
    seed: int
    distribution_id: str


def support(dist: MarginalDistribution) -> tuple[float, float]:
    match dist:
        case Uniform(lo, hi):
            return lo, hi
        case Beta():
            return 0.0, 1.0
        case PiecewiseUniform(breakpoints=breakpoints):
            return breakpoints[0], breakpoints[-1]


def distribution_id(dist: Distribution) -> str:
    match dist:
        case Uniform(lo, hi):
            return f"uniform({lo:g},{hi:g})"
        case Beta(alpha, beta):
            return f"beta({alpha:g},{beta:g})"
        case PiecewiseUniform():
            return f"piecewise_uniform({len(dist.densities)})"
        case GridJointDistribution():
            return f"grid({dist.size}x{dist.size})"


def _check_support(dist: MarginalDistribution, values: FloatArray) -> None:
    lo, hi = support(dist)
    if np.any((values < lo) | (values > hi)) or np.any(np.isnan(values)):
        raise OutOfSupportError(
            f"Values outside [{lo}, {hi}] for {distribution_id(dist)}"
        )


def _piece_index(dist: PiecewiseUniform, values: FloatArray) -> npt.NDArray[np.intp]:
    indices = np.searchsorted(dist.breakpoints, values, side="right") - 1
    return np.clip(indices, 0, len(dist.densities) - 1)


def _as_output(values: FloatArray, original: ArrayOrFloat) -> ArrayOrFloat:
    return float(values) if np.ndim(original) == 0 else values


def pdf(dist: MarginalDistribution, v: ArrayOrFloat) -> ArrayOrFloat:
    values = np.asarray(v, dtype=float)
    _check_support(dist, values)
    match dist:
        case Uniform(lo, hi):
            result = np.full_like(values, 1 / (hi - lo))
        case Beta(alpha, beta):
            result = scipy.stats.beta.pdf(values, alpha, beta)
        case PiecewiseUniform():
            result = np.asarray(dist.densities, dtype=float)[_piece_index(dist, values)]
    return _as_output(result, v)


def cdf(dist: MarginalDistribution, v: ArrayOrFloat) -> ArrayOrFloat:
    values = np.asarray(v, dtype=float)
    _check_support(dist, values)
    match dist:
        case Uniform(lo, hi):
            result = (values - lo) / (hi - lo)
        case Beta(alpha, beta):
            result = scipy.stats.beta.cdf(values, alpha, beta)
        case PiecewiseUniform():
            indices = _piece_index(dist, values)
            starts = np.asarray(dist.breakpoints, dtype=float)[indices]
            densities = np.asarray(dist.densities, dtype=float)[indices]
            result = np.minimum(
                dist.cumulative[indices] + (values - starts) * densities, 1.0
            )
    return _as_output(result, v)


def survival(dist: MarginalDistribution, v: ArrayOrFloat) -> ArrayOrFloat:
    values = np.asarray(v, dtype=float)
    return _as_output(1 - np.asarray(cdf(dist, values)), v)


def quantile(dist: MarginalDistribution, q: ArrayOrFloat) -> ArrayOrFloat:
    """Inverse cdf"""
    probabilities = np.asarray(q, dtype=float)
    if np.any((probabilities < 0) | (probabilities > 1)):
        raise OutOfSupportError("Quantiles must lie in [0, 1]")
    match dist:
        case Uniform(lo, hi):
            result = lo + probabilities * (hi - lo)
        case Beta(alpha, beta):
            result = scipy.stats.beta.ppf(probabilities, alpha, beta)
        case PiecewiseUniform():
            result = np.interp(
                probabilities, dist.cumulative, np.asarray(dist.breakpoints, float)
            )
    return _as_output(result, q)


def virtual_valuation(dist: MarginalDistribution, v: ArrayOrFloat) -> ArrayOrFloat:
    """v - (1 - F(v)) / f(v)"""
    values = np.asarray(v, dtype=float)
    densities = np.asarray(pdf(dist, values))
    if np.any(densities <= 0):
        raise DegenerateDistributionError(
            "Virtual valuation is undefined where the density is 0"
        )
    result = values - np.asarray(survival(dist, values)) / densities
    return _as_output(result, v)


@dataclass(frozen=True)
class IroningTable:
    """Upper concave envelope of the revenue curve in quantile space"""

    quantiles: FloatArray  # Hull vertices, increasing
    slopes: FloatArray  # Slope of the segment to the right of each vertex


def _upper_hull(points: FloatArray) -> npt.NDArray[np.intp]:
    """Indices of the upper hull of points, ordered by increasing x"""
    try:
        hull = ConvexHull(points)
    except QhullError as e:
        raise DegenerateDistributionError("Revenue curve is degenerate") from e

    # 2-D hull vertices come in counter-clockwise order, so walking from the
    # rightmost vertex to the leftmost traces the upper hull.
    vertices = list(hull.vertices)
    x = points[vertices, 0]
    y = points[vertices, 1]
    right = max(range(len(vertices)), key=lambda i: (x[i], y[i]))
    left = max(range(len(vertices)), key=lambda i: (-x[i], y[i]))

    upper: list[int] = []
    i = right
    while True:
        upper.append(vertices[i])
        if i == left:
            break
        i = (i + 1) % len(vertices)

    return np.asarray(upper[::-1], dtype=np.intp)


@cache
def ironing_table(dist: MarginalDistribution) -> IroningTable:
    """Tabulate R(q) = q * F^-1(1 - q) and take its upper concave envelope"""
    quantiles = np.linspace(0.0, 1.0, IRONING_RESOLUTION)
    revenue = quantiles * np.asarray(quantile(dist, 1 - quantiles))
    if not np.all(np.isfinite(revenue)):
        raise DegenerateDistributionError("Revenue curve is not finite")

    upper = _upper_hull(np.column_stack((quantiles, revenue)))
    hull_q = quantiles[upper]
    hull_r = revenue[upper]
    slopes = np.diff(hull_r) / np.diff(hull_q)
    logger.debug(
        f"Ironed {distribution_id(dist)}: {len(upper)} hull vertices "
        f"of {IRONING_RESOLUTION}"
    )
    return IroningTable(quantiles=hull_q[:-1], slopes=slopes)


def ironed_virtual_valuation(
    dist: MarginalDistribution, v: ArrayOrFloat
) -> ArrayOrFloat:
    """Slope of the ironed revenue curve at q = 1 - F(v); nondecreasing in v"""
    values = np.asarray(v, dtype=float)
    table = ironing_table(dist)
    q = 1 - np.asarray(cdf(dist, values))
    segments = np.searchsorted(table.quantiles, q, side="right") - 1
    segments = np.clip(segments, 0, len(table.slopes) - 1)
    return _as_output(table.slopes[segments], v)


def marginal(grid: GridJointDistribution, bidder: int) -> PiecewiseUniform:
    """The marginal distribution of one bidder of a grid distribution"""
    if bidder not in (0, 1):
        raise ValueError(f"Grid distributions have bidders 0 and 1, not {bidder}")
    band_mass = grid.matrix.sum(axis=1 - bidder) * grid.side**2 / grid.normalizer
    breakpoints = tuple(float(x) for x in np.linspace(0, 1, grid.size + 1))
    return PiecewiseUniform(
        breakpoints=breakpoints,
        densities=tuple(float(mass / grid.side) for mass in band_mass),
    )


def density(grid: GridJointDistribution, x: float, y: float) -> float:
    """Joint density at (x, y), with x bidder 1's value and y bidder 2's"""
    if not (0 <= x <= 1 and 0 <= y <= 1):
        raise OutOfSupportError(f"({x}, {y}) lies outside [0, 1]²")
    row = min(int(x * grid.size), grid.size - 1)
    column = min(int(y * grid.size), grid.size - 1)
    return float(grid.matrix[row, column] / grid.normalizer)


def worker_seed(seed: int, worker_index: int) -> int:
    """Seed for the sample stream of one worker"""
    return seed ^ worker_index


def sample(
    dist: Distribution, n_bidders: int, batch_size: int, seed: int
) -> SampleBatch:
    """Draw batch_size profiles of n_bidders values"""
    if batch_size < 1:
        raise ValueError(f"Batch size must be positive, got {batch_size}")

    rng = np.random.default_rng(seed)
    shape = (batch_size, n_bidders)

    match dist:
        case Uniform(lo, hi):
            profiles = rng.uniform(lo, hi, size=shape)
        case Beta(alpha, beta):
            profiles = rng.beta(alpha, beta, size=shape)
        case PiecewiseUniform():
            masses = np.diff(dist.cumulative)
            pieces = rng.choice(len(masses), size=shape, p=masses / masses.sum())
            starts = np.asarray(dist.breakpoints, dtype=float)
            widths = np.diff(starts)
            profiles = starts[pieces] + rng.uniform(size=shape) * widths[pieces]
        case GridJointDistribution():
            if n_bidders != 2:
                raise ValueError(f"Grid distributions have 2 bidders, not {n_bidders}")
            cells = rng.choice(
                dist.size**2, size=batch_size, p=dist.cell_probabilities.ravel()
            )
            rows, columns = np.divmod(cells, dist.size)
            offsets = rng.uniform(size=shape)
            profiles = (np.column_stack((rows, columns)) + offsets) * dist.side

    return SampleBatch(
        profiles=profiles, seed=seed, distribution_id=distribution_id(dist)
    )


def load_grid(path: Path) -> GridJointDistribution:
    """Read a grid distribution from a json file"""
    with path.open("r") as f:
        try:
            source = json.load(f)
        except json.JSONDecodeError as e:
            raise InvalidDistributionError(f"Failed to parse grid at {path=}") from e
    if not isinstance(source, dict):
        raise InvalidDistributionError("Grid file must contain a mapping")
    return GridJointDistribution.from_dict(source)


@cache
def default_grid() -> GridJointDistribution:
    """The shipped 5x5 correlated grid"""
    text = resources.files("amd.data").joinpath("correlated_grid.json").read_text()
    return GridJointDistribution.from_dict(json.loads(text))


def distribution_to_dict(dist: Distribution) -> dict[str, object]:
    match dist:
        case Uniform(lo, hi):
            return {"kind": "uniform", "lo": lo, "hi": hi}
        case Beta(alpha, beta):
            return {"kind": "beta", "alpha": alpha, "beta": beta}
        case PiecewiseUniform(breakpoints, densities):
            return {
                "kind": "piecewise_uniform",
                "breakpoints": list(breakpoints),
                "densities": list(densities),
            }
        case GridJointDistribution():
            return {"kind": "grid", **dist.to_dict()}


def _number(source: Mapping[str, object], key: str, default: float | None) -> float:
    value = source.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InvalidDistributionError(f"Distribution key '{key}' must be a number")
    return float(value)


def _numbers(source: Mapping[str, object], key: str) -> tuple[float, ...]:
    value = source.get(key)
    if not isinstance(value, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
    ):
        raise InvalidDistributionError(
            f"Distribution key '{key}' must be a number list"
        )
    return tuple(float(x) for x in value)


def distribution_from_dict(source: Mapping[str, object]) -> Distribution:
    """
    Build a distribution from its dict form

    A grid without cells (optionally with a "path") loads from file, or the
    shipped matrix when no path is given.
    """
    kind = source.get("kind")
    allowed_keys = {
        "uniform": {"kind", "lo", "hi"},
        "beta": {"kind", "alpha", "beta"},
        "piecewise_uniform": {"kind", "breakpoints", "densities"},
        "grid": {"kind", "cells", "side", "path"},
    }
    if not isinstance(kind, str) or kind not in allowed_keys:
        raise InvalidDistributionError(f"Unknown distribution kind {kind!r}")
    unknown = set(source) - allowed_keys[kind]
    if unknown:
        raise InvalidDistributionError(
            f"Unknown keys for {kind} distribution: {sorted(unknown)}"
        )

    match kind:
        case "uniform":
            return Uniform(_number(source, "lo", 0.0), _number(source, "hi", 1.0))
        case "beta":
            return Beta(_number(source, "alpha", None), _number(source, "beta", None))
        case "piecewise_uniform":
            return PiecewiseUniform(
                _numbers(source, "breakpoints"), _numbers(source, "densities")
            )

    if "cells" in source:
        return GridJointDistribution.from_dict(source)
    path = source.get("path")
    if path is None:
        return default_grid()
    if not isinstance(path, str):
        raise InvalidDistributionError("Grid 'path' must be a string")
    return load_grid(Path(path))


# Distributions used together in multi-distribution evaluation
MULTI_DISTRIBUTION_SET: tuple[MarginalDistribution, ...] = (
    Beta(2, 5),
    Beta(0.5, 0.5),
    Beta(2, 2),
    Uniform(0, 1),
)
