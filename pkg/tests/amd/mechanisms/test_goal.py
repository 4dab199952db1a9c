import json
from pathlib import Path

import numpy as np
import pytest

from amd.mechanisms.goal import (
    GoalFunction,
    GoalFunctionError,
    Metric,
    default_goal_function,
    load_goal_function,
    tabulate,
)

LINE = GoalFunction(grid=((0.0, 0.5, 1.0),), values=np.array([0.0, 1.0, 4.0]))


def test_default_goal_function() -> None:
    goal = default_goal_function()
    assert goal.input_dimension == 3
    assert goal.output_length is None
    assert goal.metric_hint is Metric.L2

    points = [[0.2, 0.4, 0.9], [0.5, 0.5, 0.5], [1.0, 0.95, 1.0], [0.0, 1.0, 1.0]]
    assert goal(points) == pytest.approx([0.1, 0.25, 0.475, 0.0])


def test_default_goal_function_is_cached() -> None:
    assert default_goal_function() is default_goal_function()


@pytest.mark.parametrize(
    "point, value",
    (
        (0.0, 0.0),
        (0.25, 0.5),
        (0.5, 1.0),
        (0.75, 2.5),
        (1.0, 4.0),
        # Outside the grid the boundary value is used
        (-3.0, 0.0),
        (1.5, 4.0),
    ),
)
def test_goal_interpolation(point: float, value: float) -> None:
    assert LINE([[point]]) == pytest.approx([value])


def test_goal_wrong_point_shape() -> None:
    with pytest.raises(GoalFunctionError):
        LINE([0.5])
    with pytest.raises(GoalFunctionError):
        LINE([[0.5, 0.5]])


def test_goal_vector_output() -> None:
    goal = GoalFunction(
        grid=((0.0, 1.0),), values=np.array([[0.0, 1.0, 2.0], [1.0, 1.0, 0.0]])
    )
    assert goal.output_length == 3
    result = goal([[0.5], [1.0]])
    assert result.shape == (2, 3)
    assert result == pytest.approx(np.array([[0.5, 1.0, 1.0], [1.0, 1.0, 0.0]]))


@pytest.mark.parametrize(
    "grid, values",
    (
        ((), np.array(1.0)),
        (((0.0,),), np.array([1.0])),
        (((0.0, 0.0, 1.0),), np.zeros(3)),
        (((1.0, 0.0),), np.zeros(2)),
        (((0.0, 1.0),), np.zeros(3)),
        (((0.0, 1.0), (0.0, 1.0)), np.zeros(2)),
        (((0.0, 1.0),), np.zeros((2, 2, 2))),
        (((0.0, 1.0),), np.array([0.0, np.nan])),
        (((0.0, 1.0),), np.array([0.0, np.inf])),
    ),
)
def test_goal_invalid(grid: tuple[tuple[float, ...], ...], values: np.ndarray) -> None:
    with pytest.raises(GoalFunctionError):
        GoalFunction(grid=grid, values=values)


@pytest.mark.parametrize(
    "source",
    (
        {"grid": [[0, 1]], "values": [0, 1], "extra": 1},
        {"grid": [0, 1], "values": [0, 1]},
        {"grid": "no", "values": [0, 1]},
        {"values": [0, 1]},
        {"grid": [[0, 1]], "values": ["a", "b"]},
        {"grid": [[0, "x"]], "values": [0, 1]},
        {"grid": [[0, 1]], "values": [0, 1], "metric_hint": "L3"},
    ),
)
def test_goal_from_dict_invalid(source: dict[str, object]) -> None:
    with pytest.raises(GoalFunctionError):
        GoalFunction.from_dict(source)


def test_goal_dict_roundtrip() -> None:
    goal = GoalFunction.from_dict(
        {"grid": [[0, 0.5, 1], [0, 1]], "values": [[0, 1], [2, 3], [4, 5]]}
    )
    assert goal.metric_hint is None
    assert goal([[0.5, 1.0]]) == pytest.approx([3.0])

    copy = GoalFunction.from_dict(goal.to_dict())
    assert copy.grid == goal.grid
    assert np.array_equal(copy.values, goal.values)


def test_load_goal_function(tmp_path: Path) -> None:
    path = tmp_path / "goal.json"
    source = {"grid": [[0, 1]], "values": [1, 3], "metric_hint": "L1"}
    path.write_text(json.dumps(source))

    goal = load_goal_function(path)
    assert goal.metric_hint is Metric.L1
    assert goal([[0.5]]) == pytest.approx([2.0])


@pytest.mark.parametrize("content", ("not json", "[1, 2]"))
def test_load_goal_function_invalid(tmp_path: Path, content: str) -> None:
    path = tmp_path / "goal.json"
    path.write_text(content)
    with pytest.raises(GoalFunctionError):
        load_goal_function(path)


def test_tabulate_cavallo() -> None:
    """Tabulating the shipped rule reproduces the shipped table"""
    steps = [round(0.05 * i, 2) for i in range(21)]
    goal = tabulate(
        lambda points: 0.5 * points.min(axis=1), [steps] * 3, metric_hint=Metric.L2
    )
    shipped = default_goal_function()
    assert goal.grid == shipped.grid
    assert goal.values == pytest.approx(shipped.values)


def test_goal_grid_points() -> None:
    goal = tabulate(lambda points: points.sum(axis=1), [[0, 1], [0, 1, 2]])
    assert goal.grid_points().tolist() == [
        [0, 0],
        [0, 1],
        [0, 2],
        [1, 0],
        [1, 1],
        [1, 2],
    ]
    assert goal(goal.grid_points()) == pytest.approx([0, 1, 2, 1, 2, 3])


@pytest.mark.parametrize(
    "metric, left, right, distance",
    (
        (Metric.L1, [0.5, 0.1], [0.2, 0.4], [0.3, 0.3]),
        (Metric.L2, [0.5, 0.1], [0.2, 0.4], [0.09, 0.09]),
        (Metric.L1, [[0.5, 0.1], [0, 0]], [[0.2, 0.4], [1, -1]], [0.6, 2.0]),
        (Metric.L2, [[0.5, 0.1], [0, 0]], [[0.2, 0.4], [1, -1]], [0.18, 2.0]),
    ),
)
def test_metric_distance(
    metric: Metric,
    left: list[float],
    right: list[float],
    distance: list[float],
) -> None:
    result = metric.distance(np.array(left), np.array(right))
    assert result == pytest.approx(distance)
