"""
Single item mechanisms built from allocation heuristics

A joint allocation heuristic maps the bid profile to n + 1 scores; the item
goes to the argmax, the last slot meaning no sale. Lower indices win ties, so
a bidder whose score equals the no-sale score still wins. The winner pays the
critical price: the lowest price on the ε-grid from which every higher grid
bid keeps winning. That makes the allocation monotone by construction.
"""

import logging
from collections.abc import Sequence

import numpy as np
import numpy.typing as npt

from amd.distributions import MarginalDistribution
from amd.dsl.expr import HeuristicProgram, SignatureKind
from amd.dsl.interpreter import evaluate_batch
from amd.mechanisms.outcome import FloatArray, MechanismOutcome, OutcomeBatch

logger = logging.getLogger(__name__)

IntArray = npt.NDArray[np.intp]

# Grid prices probed per block of the descending scan
SCAN_BLOCK = 128

# Profiles evaluated at once by the descending scan
SCAN_CHUNK_PROFILES = 262_144


def price_grid(epsilon: float) -> FloatArray:
    """The prices {0, ε, 2ε, ...} up to 1"""
    steps = int(np.floor(1 / epsilon + 1e-9))
    return np.round(np.arange(steps + 1) * epsilon, 12)


def joint_scores(
    program: HeuristicProgram,
    bids: FloatArray,
    distribution: MarginalDistribution | None = None,
) -> FloatArray:
    return evaluate_batch(program, bids, distribution=distribution)


def per_bidder_scores(
    program: HeuristicProgram,
    bids: FloatArray,
    distribution: MarginalDistribution | None = None,
) -> FloatArray:
    """[h(b_1), ..., h(b_n), 0] for every profile"""
    values = evaluate_batch(program, bids.ravel(), distribution=distribution)
    scores = values.reshape(bids.shape)
    return np.concatenate((scores, np.zeros((bids.shape[0], 1))), axis=1)


def adapt_per_bidder(
    program: HeuristicProgram,
    bids: Sequence[float],
    distribution: MarginalDistribution | None = None,
) -> FloatArray:
    """
    The allocation vector of a per-bidder score function

    Nobody gets the item iff every score is negative.
    """
    return per_bidder_scores(program, np.asarray([bids], dtype=float), distribution)[0]


def _scores(
    program: HeuristicProgram,
    bids: FloatArray,
    distribution: MarginalDistribution | None,
) -> FloatArray:
    if program.signature.kind is SignatureKind.PER_BIDDER_SCORE:
        return per_bidder_scores(program, bids, distribution)
    if program.signature.kind is SignatureKind.JOINT_ALLOCATION:
        return joint_scores(program, bids, distribution)
    raise ValueError(f"{program.signature.kind.value} heuristics don't allocate items")


def _grid_prices(index: IntArray, grid: FloatArray) -> FloatArray:
    """Price at each grid index, inf where the index is past the grid"""
    clipped = np.minimum(index, grid.size - 1)
    return np.where(index < grid.size, grid[clipped], np.inf)


def _wins_in_block(
    program: HeuristicProgram,
    bids: FloatArray,
    winners: IntArray,
    active: IntArray,
    block: FloatArray,
    distribution: MarginalDistribution | None,
) -> npt.NDArray[np.bool_]:
    """Whether each active winner still wins at each price of the block"""
    rows = np.repeat(active, block.size)
    columns = winners[rows]

    profiles = bids[rows]
    profiles[np.arange(rows.size), columns] = np.tile(block, active.size)
    scores = _scores(program, profiles, distribution)
    wins = np.argmax(scores, axis=1) == columns
    return wins.reshape(active.size, block.size)


def scan_critical_prices(
    program: HeuristicProgram,
    bids: FloatArray,
    winners: IntArray,
    grid: FloatArray,
    distribution: MarginalDistribution | None = None,
) -> FloatArray:
    """
    Critical prices by scanning the price grid downwards from the top

    Profiles leave the scan as soon as their winner loses, so the cost follows
    the distance between the top of the grid and the price. A winner that
    loses at the top of the grid gets an infinite price. winners equal to
    the number of bidders mean no sale and also get an infinite price.
    """
    n_bidders = bids.shape[1]
    price_index = np.full(bids.shape[0], grid.size, dtype=np.intp)
    active = np.flatnonzero(winners < n_bidders)

    top = grid.size
    while active.size and top > 0:
        block = grid[max(0, top - SCAN_BLOCK) : top]
        step = max(1, SCAN_CHUNK_PROFILES // block.size)
        wins = np.concatenate(
            [
                _wins_in_block(
                    program,
                    bids,
                    winners,
                    active[start : start + step],
                    block,
                    distribution,
                )
                for start in range(0, active.size, step)
            ]
        )

        # Consecutive wins counted downwards from the top of the block
        streak = np.cumprod(wins[:, ::-1], axis=1).sum(axis=1)
        price_index[active] = top - streak

        active = active[streak == block.size]
        top -= block.size

    return _grid_prices(price_index, grid)


def suffix_min_critical_prices(
    grid_scores: FloatArray,
    scores: FloatArray,
    winners: IntArray,
    grid: FloatArray,
) -> FloatArray:
    """
    Critical prices when each bidder's score only depends on their own bid

    grid_scores[i, k] is bidder i's score at grid[k] and scores the (B, n + 1)
    allocation vectors at the true bids. Bidder m keeps winning at grid[k] iff
    its score there is at least every higher slot's score and strictly above
    every lower bidder's; all higher grid bids keep winning iff the same holds
    for the suffix minimum. Identical to the descending scan.
    """
    n_bidders = grid_scores.shape[0]
    suffix_min = np.minimum.accumulate(grid_scores[:, ::-1], axis=1)[:, ::-1]

    price_index = np.full(scores.shape[0], grid.size, dtype=np.intp)
    for m in range(n_bidders):
        rows = np.flatnonzero(winners == m)
        if rows.size == 0:
            continue

        # The no-sale slot sits after every bidder
        at_least = scores[rows, m + 1 :].max(axis=1)
        above = scores[rows, :m].max(axis=1) if m > 0 else np.full(rows.size, -np.inf)
        price_index[rows] = np.maximum(
            np.searchsorted(suffix_min[m], at_least, side="left"),
            np.searchsorted(suffix_min[m], above, side="right"),
        )

    return _grid_prices(price_index, grid)


def critical_prices_batch(
    program: HeuristicProgram,
    bids: FloatArray,
    winners: IntArray,
    epsilon: float,
    distribution: MarginalDistribution | None = None,
    scores: FloatArray | None = None,
) -> FloatArray:
    grid = price_grid(epsilon)
    if program.signature.kind is not SignatureKind.PER_BIDDER_SCORE:
        return scan_critical_prices(program, bids, winners, grid, distribution)

    if scores is None:
        scores = per_bidder_scores(program, bids, distribution)
    values = evaluate_batch(program, grid, distribution=distribution)
    grid_scores = np.broadcast_to(values, (bids.shape[1], grid.size))
    return suffix_min_critical_prices(grid_scores, scores, winners, grid)


def critical_price(
    program: HeuristicProgram,
    bids: Sequence[float],
    winner: int,
    epsilon: float,
    distribution: MarginalDistribution | None = None,
) -> float:
    """The lowest grid price from which winner keeps winning, inf if none"""
    profile = np.asarray([bids], dtype=float)
    scores = _scores(program, profile, distribution)
    if int(np.argmax(scores[0])) != winner or winner >= profile.shape[1]:
        raise ValueError(f"Bidder {winner} doesn't win at {list(bids)}")

    prices = critical_prices_batch(
        program,
        profile,
        np.array([winner], dtype=np.intp),
        epsilon,
        distribution,
        scores=scores,
    )
    return float(prices[0])


def allocate_at_prices(
    bids: FloatArray, winners: IntArray, prices: FloatArray
) -> OutcomeBatch:
    """The winner buys iff its critical price doesn't exceed its bid"""
    batch_size, n_bidders = bids.shape
    rows = np.arange(batch_size)
    is_bidder = winners < n_bidders
    winner_column = np.minimum(winners, n_bidders - 1)
    sold = is_bidder & (prices <= bids[rows, winner_column])

    allocation = np.zeros(bids.shape, dtype=bool)
    allocation[rows[sold], winner_column[sold]] = True
    payments = np.zeros(bids.shape)
    payments[rows[sold], winner_column[sold]] = prices[sold]
    return OutcomeBatch.without_redistribution(allocation, payments)


def solve_single_item_batch(
    program: HeuristicProgram,
    bids: FloatArray,
    epsilon: float,
    distribution: MarginalDistribution | None = None,
) -> OutcomeBatch:
    scores = _scores(program, bids, distribution)
    winners = np.argmax(scores, axis=1)
    prices = critical_prices_batch(
        program, bids, winners, epsilon, distribution, scores=scores
    )
    outcome = allocate_at_prices(bids, winners, prices)
    logger.debug(
        f"Sold {int(outcome.allocation.any(axis=1).sum())} of {bids.shape[0]} items"
    )
    return outcome


def solve_single_item(
    program: HeuristicProgram,
    bids: Sequence[float],
    epsilon: float,
    distribution: MarginalDistribution | None = None,
) -> MechanismOutcome:
    batch = solve_single_item_batch(
        program, np.asarray([bids], dtype=float), epsilon, distribution
    )
    return batch.outcome(0)
