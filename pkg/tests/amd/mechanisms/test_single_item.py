import math

import numpy as np
import pytest

from amd.distributions import MarginalDistribution, Uniform
from amd.dsl.expr import (
    HeuristicProgram,
    joint_allocation_signature,
    per_bidder_signature,
)
from amd.dsl.parsing import parse
from amd.mechanisms.single_item import (
    adapt_per_bidder,
    critical_price,
    price_grid,
    solve_single_item,
    solve_single_item_batch,
)
from amd.mechanisms.vcg import vcg_unit_demand_batch


def joint_program(expression: str, n_bidders: int = 2) -> HeuristicProgram:
    return parse(
        f"def heuristic(bids): return {expression}",
        joint_allocation_signature(n_bidders),
    )


def per_bidder_program(expression: str) -> HeuristicProgram:
    return parse(f"def heuristic(v): return {expression}", per_bidder_signature())


IDENTITY = joint_program("[bids[0], bids[1], 0]")
ALWAYS_FIRST = joint_program("[1, 0, 0]")
# Only wins with a low bid, so raising it loses the item
DECREASING = joint_program("[0.5 - bids[0], 0, 0]")
VIRTUAL_VALUATION = per_bidder_program("v - (1 - cdf(v)) / pdf(v)")

SIGMOID = parse(
    """
def heuristic(bids):
    threshold = 0.5
    alloc_bidder1 = sigmoid(10 * (bids[0] - threshold))
    alloc_bidder2 = sigmoid(10 * (bids[1] - threshold))
    no_alloc = 1 - max(alloc_bidder1, alloc_bidder2)
    return [alloc_bidder1, alloc_bidder2, no_alloc]
""",
    joint_allocation_signature(2),
)


@pytest.mark.parametrize(
    "epsilon, prices",
    (
        (1.0, [0, 1]),
        (0.25, [0, 0.25, 0.5, 0.75, 1]),
        (0.3, [0, 0.3, 0.6, 0.9]),
        (0.1, [0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1]),
    ),
)
def test_price_grid(epsilon: float, prices: list[float]) -> None:
    assert price_grid(epsilon).tolist() == prices


def test_price_grid_fine() -> None:
    grid = price_grid(0.001)
    assert grid.size == 1001
    assert grid[300] == 0.3
    assert grid[-1] == 1.0


@pytest.mark.parametrize(
    "bids, scores",
    (
        ([0.8, 0.6], [0.6, 0.2, 0]),
        ([0.4, 0.3], [-0.2, -0.4, 0]),
        ([0.5, 0.75, 0.25], [0, 0.5, -0.5, 0]),
    ),
)
def test_adapt_per_bidder(bids: list[float], scores: list[float]) -> None:
    result = adapt_per_bidder(VIRTUAL_VALUATION, bids, Uniform())
    assert result == pytest.approx(scores)


@pytest.mark.parametrize(
    "program, bids, winner, distribution, price",
    (
        (IDENTITY, [0.6, 0.3], 0, None, 0.3),
        # A higher index has to beat lower ones strictly
        (IDENTITY, [0.3, 0.6], 1, None, 0.301),
        (ALWAYS_FIRST, [0.6, 0.3], 0, None, 0.0),
        (SIGMOID, [0.7, 0.4], 0, None, 0.5),
        (SIGMOID, [0.7, 0.6], 0, None, 0.6),
        (SIGMOID, [0.6, 0.7], 1, None, 0.601),
        (DECREASING, [0.2, 0.3], 0, None, math.inf),
        (VIRTUAL_VALUATION, [0.8, 0.6], 0, Uniform(), 0.6),
        (VIRTUAL_VALUATION, [0.8, 0.2], 0, Uniform(), 0.5),
        # Scoring exactly 0 still beats not selling
        (per_bidder_program("v - 0.5"), [0.5, 0.2], 0, None, 0.5),
    ),
)
def test_critical_price(
    program: HeuristicProgram,
    bids: list[float],
    winner: int,
    distribution: MarginalDistribution | None,
    price: float,
) -> None:
    result = critical_price(program, bids, winner, 0.001, distribution)
    assert result == pytest.approx(price, abs=1e-9)


@pytest.mark.parametrize(
    "program, bids, winner",
    (
        (IDENTITY, [0.6, 0.3], 1),
        (IDENTITY, [0.6, 0.3], 2),
        (joint_program("[0, 0, 1]"), [0.6, 0.3], 0),
    ),
)
def test_critical_price_not_winning(
    program: HeuristicProgram, bids: list[float], winner: int
) -> None:
    with pytest.raises(ValueError):
        critical_price(program, bids, winner, 0.001)


@pytest.mark.parametrize(
    "program, bids, distribution, winners, payments",
    (
        (IDENTITY, [0.6, 0.3], None, {0}, (0.3, 0)),
        (SIGMOID, [0.45, 0.40], None, set(), (0, 0)),
        (SIGMOID, [0.7, 0.4], None, {0}, (0.5, 0)),
        (VIRTUAL_VALUATION, [0.8, 0.6], Uniform(), {0}, (0.6, 0)),
        (VIRTUAL_VALUATION, [0.4, 0.3], Uniform(), set(), (0, 0)),
        (DECREASING, [0.2, 0.3], None, set(), (0, 0)),
        (joint_program("[0, 0, 1]"), [0.9, 0.8], None, set(), (0, 0)),
        (ALWAYS_FIRST, [0.1, 0.9], None, {0}, (0, 0)),
    ),
)
def test_solve_single_item(
    program: HeuristicProgram,
    bids: list[float],
    distribution: MarginalDistribution | None,
    winners: set[int],
    payments: tuple[float, ...],
) -> None:
    outcome = solve_single_item(program, bids, 0.001, distribution)
    assert outcome.winners == winners
    assert outcome.payments == pytest.approx(payments, abs=1e-9)
    assert outcome.redistribution == (0, 0)


def test_solve_single_item_matches_second_price() -> None:
    bids = np.round(np.random.default_rng(3).uniform(size=(300, 2)), 3)
    outcome = solve_single_item_batch(IDENTITY, bids, 0.001)
    allocation, payments = vcg_unit_demand_batch(bids, 1)
    assert np.array_equal(outcome.allocation, allocation)
    assert outcome.payments == pytest.approx(payments, abs=1.5e-3)


@pytest.mark.parametrize(
    "per_bidder, joint",
    (
        ("2 * v - 1", "[2 * bids[0] - 1, 2 * bids[1] - 1, 0]"),
        (
            "(v - 0.5) ** 2 - 0.01",
            "[(bids[0] - 0.5) ** 2 - 0.01, (bids[1] - 0.5) ** 2 - 0.01, 0]",
        ),
        (
            "0.3 if v > 0.7 else -1",
            "[0.3 if bids[0] > 0.7 else -1, 0.3 if bids[1] > 0.7 else -1, 0]",
        ),
    ),
)
def test_per_bidder_prices_match_scan(per_bidder: str, joint: str) -> None:
    bids = np.random.default_rng(4).uniform(size=(500, 2))
    fast = solve_single_item_batch(per_bidder_program(per_bidder), bids, 0.01)
    scanned = solve_single_item_batch(joint_program(joint), bids, 0.01)
    assert np.array_equal(fast.allocation, scanned.allocation)
    assert np.array_equal(fast.payments, scanned.payments)


def test_solve_single_item_monotone() -> None:
    """Raising the winner's bid on the price grid never loses the item"""
    rng = np.random.default_rng(6)
    bids = np.round(rng.uniform(size=(300, 2)), 2)
    outcome = solve_single_item_batch(SIGMOID, bids, 0.01)

    raised = bids.copy()
    sold = outcome.allocation.any(axis=1)
    for row in np.flatnonzero(sold):
        winner = int(np.flatnonzero(outcome.allocation[row])[0])
        raised[row, winner] = np.round(rng.uniform(bids[row, winner], 1), 2)
    raised_outcome = solve_single_item_batch(SIGMOID, raised, 0.01)

    assert np.array_equal(raised_outcome.allocation[sold], outcome.allocation[sold])
    assert raised_outcome.payments[sold] == pytest.approx(outcome.payments[sold])


def test_solve_single_item_payment_below_bid() -> None:
    bids = np.random.default_rng(7).uniform(size=(500, 2))
    outcome = solve_single_item_batch(SIGMOID, bids, 0.001)
    assert np.all(outcome.payments <= bids)
    assert np.all(outcome.payments >= 0)
    assert np.all(outcome.allocation.sum(axis=1) <= 1)


def test_solve_single_item_epsilon_stable() -> None:
    bids = np.random.default_rng(8).uniform(size=(200, 2))
    coarse = solve_single_item_batch(SIGMOID, bids, 0.01)
    fine = solve_single_item_batch(SIGMOID, bids, 0.001)
    both = coarse.allocation.any(axis=1) & fine.allocation.any(axis=1)
    assert np.all(np.abs(coarse.payments[both] - fine.payments[both]) <= 0.01 + 1e-9)


def test_solve_single_item_three_bidders() -> None:
    program = joint_program("[bids[0], bids[1], bids[2], 0.5]", n_bidders=3)
    outcome = solve_single_item(program, [0.4, 0.8, 0.6], 0.001)
    assert outcome.winners == {1}
    assert outcome.payments == pytest.approx((0, 0.6, 0), abs=1e-9)
