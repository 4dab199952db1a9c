"""Myerson's optimal auction for independent bidders, optionally ironed"""

import logging
from collections.abc import Sequence

import numpy as np

from amd import distributions
from amd.distributions import MarginalDistribution
from amd.mechanisms.outcome import FloatArray, MechanismOutcome, OutcomeBatch
from amd.mechanisms.single_item import (
    allocate_at_prices,
    price_grid,
    suffix_min_critical_prices,
)

logger = logging.getLogger(__name__)

# Virtual valuations are taken this far inside the support
SUPPORT_MARGIN = 1e-9


def _virtual_values(
    dist: MarginalDistribution, values: FloatArray, ironed: bool
) -> FloatArray:
    lo, hi = distributions.support(dist)
    inside = np.clip(values, lo + SUPPORT_MARGIN, hi - SUPPORT_MARGIN)
    inside = np.where((values < lo) | (values > hi), values, inside)
    if ironed:
        return np.asarray(distributions.ironed_virtual_valuation(dist, inside))
    return np.asarray(distributions.virtual_valuation(dist, inside))


def myerson_optimal_batch(
    marginals: Sequence[MarginalDistribution],
    bids: FloatArray,
    ironed: bool = False,
    epsilon: float = 0.001,
) -> OutcomeBatch:
    """
    Sell to the highest (ironed) virtual value if it is nonnegative

    Bidder i's virtual value comes from marginals[i]. The winner pays the
    lowest ε-grid bid at which they would still have won.
    """
    if len(marginals) != bids.shape[1]:
        raise ValueError(f"Got {len(marginals)} marginals for {bids.shape[1]} bidders")

    grid = price_grid(epsilon)
    scores = np.zeros((bids.shape[0], bids.shape[1] + 1))
    grid_scores = np.empty((bids.shape[1], grid.size))
    for i, dist in enumerate(marginals):
        scores[:, i] = _virtual_values(dist, bids[:, i], ironed)
        grid_scores[i] = _virtual_values(dist, grid, ironed)

    winners = np.argmax(scores, axis=1)
    prices = suffix_min_critical_prices(grid_scores, scores, winners, grid)
    return allocate_at_prices(bids, winners, prices)


def myerson_optimal(
    marginals: Sequence[MarginalDistribution],
    bids: Sequence[float],
    ironed: bool = False,
    epsilon: float = 0.001,
) -> MechanismOutcome:
    batch = myerson_optimal_batch(
        marginals, np.asarray([bids], dtype=float), ironed, epsilon
    )
    return batch.outcome(0)
