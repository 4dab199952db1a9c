"""
VCG payments for unit demand and the redistribution fixes

A redistribution heuristic pays bidder i an amount computed from the sorted
bids of the others. The waterfilling fix trims the rebates down to the total
VCG payment; the corrected fix subtracts from each rebate the largest trim
bidder i could ever cause, so the rebate stays independent of i's own bid.
"""

import logging
from collections.abc import Sequence
from enum import Enum, unique

import numpy as np
import numpy.typing as npt

from amd.dsl.expr import HeuristicProgram
from amd.dsl.interpreter import evaluate_batch
from amd.mechanisms.outcome import FloatArray, MechanismOutcome, OutcomeBatch

logger = logging.getLogger(__name__)

# Profiles evaluated per chunk when sweeping replacement bids
PROBE_CHUNK_PROFILES = 200_000


@unique
class ReverseFix(str, Enum):
    OFF = "off"
    MAX = "max"
    MIN = "min"


def uniform_grid(resolution: int) -> FloatArray:
    """
    resolution evenly spaced points on [0, 1]

    Rounded like the price grid, so both grids share the points they have in
    common bit for bit.
    """
    return np.round(np.linspace(0.0, 1.0, resolution), 12)


def vcg_unit_demand_batch(
    bids: FloatArray, n_items: int
) -> tuple[npt.NDArray[np.bool_], FloatArray]:
    """
    The n_items highest bidders win and each pays the (n_items + 1)-th bid

    Among equal bids the lower index wins.
    """
    n_bidders = bids.shape[1]
    if not 0 < n_items < n_bidders:
        raise ValueError(f"Need 0 < n_items < n_bidders, got {n_items=}, {n_bidders=}")

    order = np.argsort(-bids, axis=1, kind="stable")
    winners = order[:, :n_items]
    threshold = np.take_along_axis(bids, order[:, n_items : n_items + 1], axis=1)

    allocation = np.zeros(bids.shape, dtype=bool)
    np.put_along_axis(allocation, winners, True, axis=1)
    payments = np.where(allocation, threshold, 0.0)
    return allocation, payments


def vcg_unit_demand(
    bids: Sequence[float], n_items: int
) -> tuple[frozenset[int], tuple[float, ...]]:
    allocation, payments = vcg_unit_demand_batch(np.asarray([bids], float), n_items)
    winners = frozenset(int(i) for i in np.flatnonzero(allocation[0]))
    return winners, tuple(float(p) for p in payments[0])


def vcg_payment_total(bids: FloatArray, n_items: int) -> FloatArray:
    """Σ VCG payments: n_items times the (n_items + 1)-th highest bid"""
    descending = -np.sort(-bids, axis=1)
    return n_items * descending[:, n_items]


def others_sorted(bids: FloatArray, bidder: int) -> FloatArray:
    """Ascending bids of everyone but bidder"""
    return np.sort(np.delete(bids, bidder, axis=1), axis=1)


def redistribution_batch(program: HeuristicProgram, bids: FloatArray) -> FloatArray:
    """Component i is the program applied to the sorted bids of the others"""
    columns = [
        evaluate_batch(program, others_sorted(bids, i)) for i in range(bids.shape[1])
    ]
    return np.stack(columns, axis=1)


def redistribution_vector(
    program: HeuristicProgram, bids: Sequence[float]
) -> FloatArray:
    return redistribution_batch(program, np.asarray([bids], dtype=float))[0]


def waterfill_batch(
    redistribution: FloatArray, payment_total: FloatArray
) -> FloatArray:
    """
    Trim each row of rebates so it sums to at most its payment total

    The overflow is deducted evenly; rebates too small to carry their share
    are zeroed and the rest of the overflow is spread over the larger ones.
    Rows that don't overflow are returned unchanged.
    """
    n = redistribution.shape[1]
    overflow = redistribution.sum(axis=1) - payment_total

    order = np.argsort(redistribution, axis=1, kind="stable")
    values = np.take_along_axis(redistribution, order, axis=1)

    pending = overflow >= 0
    remaining = np.where(pending, overflow, 0.0)
    for j in range(n):
        fits = pending & (values[:, j] * (n - j) > remaining)
        values[fits, j:] -= (remaining[fits] / (n - j))[:, None]

        drained = pending & ~fits
        remaining = np.where(drained, remaining - values[:, j], remaining)
        values[drained, j] = 0.0
        pending = drained

    fixed = np.empty_like(redistribution)
    np.put_along_axis(fixed, order, values, axis=1)
    return fixed


def waterfill(redistribution: Sequence[float], payment_total: float) -> FloatArray:
    return waterfill_batch(
        np.asarray([redistribution], dtype=float), np.asarray([payment_total])
    )[0]


def _replaced(bids: FloatArray, bidder: int, probes: FloatArray) -> FloatArray:
    """
    Every profile with bidder's bid replaced by each probe

    probes has shape (B, K); the result has shape (B * K, n), rows grouped by
    profile.
    """
    batch_size, n_probes = probes.shape
    profiles = np.repeat(bids, n_probes, axis=0)
    profiles[:, bidder] = probes.ravel()
    return profiles


def _chunks(batch_size: int, n_probes: int) -> list[slice]:
    step = max(1, PROBE_CHUNK_PROFILES // n_probes)
    return [slice(start, start + step) for start in range(0, batch_size, step)]


def _max_deduction(
    program: HeuristicProgram,
    bids: FloatArray,
    bidder: int,
    n_items: int,
    grid: FloatArray,
) -> FloatArray:
    """Largest waterfilling deduction on bidder over all replacement bids"""
    others = np.delete(bids, bidder, axis=1)
    probes = np.concatenate(
        (np.broadcast_to(grid, (bids.shape[0], grid.size)), others), axis=1
    )
    n_probes = probes.shape[1]

    result = np.empty(bids.shape[0])
    for chunk in _chunks(bids.shape[0], n_probes):
        profiles = _replaced(bids[chunk], bidder, probes[chunk])
        rebates = np.maximum(redistribution_batch(program, profiles), 0.0)
        trimmed = waterfill_batch(rebates, vcg_payment_total(profiles, n_items))
        deduction = rebates[:, bidder] - trimmed[:, bidder]
        result[chunk] = deduction.reshape(-1, n_probes).max(axis=1)

    return result


def corrected_fix_batch(
    program: HeuristicProgram,
    bids: FloatArray,
    n_items: int,
    grid_resolution: int,
) -> OutcomeBatch:
    """
    VCG outcome with own-bid-independent rebates summing to at most the payments

    Negative rebates count as 0, so the fixed rebates are never negative.
    """
    allocation, payments = vcg_unit_demand_batch(bids, n_items)
    rebates = np.maximum(redistribution_batch(program, bids), 0.0)

    grid = uniform_grid(grid_resolution)
    fixed = np.empty_like(rebates)
    for bidder in range(bids.shape[1]):
        deduction = _max_deduction(program, bids, bidder, n_items, grid)
        fixed[:, bidder] = np.maximum(rebates[:, bidder] - deduction, 0.0)

    return OutcomeBatch(allocation, payments, fixed)


def corrected_fix(
    program: HeuristicProgram,
    bids: Sequence[float],
    n_items: int,
    grid_resolution: int,
) -> MechanismOutcome:
    batch = corrected_fix_batch(
        program, np.asarray([bids], dtype=float), n_items, grid_resolution
    )
    return batch.outcome(0)


def _surplus(
    program: HeuristicProgram, profiles: FloatArray, n_items: int, fix_resolution: int
) -> FloatArray:
    """Payments left over after the corrected fix, floored at 0"""
    fixed = corrected_fix_batch(program, profiles, n_items, fix_resolution)
    return np.maximum(fixed.revenue - fixed.total_redistribution, 0.0)


def reverse_waterfill_batch(
    outcome: OutcomeBatch,
    program: HeuristicProgram,
    bids: FloatArray,
    n_items: int,
    grid_resolution: int,
    aggregation: ReverseFix,
    fix_grid_resolution: int = 101,
) -> OutcomeBatch:
    """
    Hand the surplus left by the corrected fix back evenly

    Bidder i's add-back is surplus(b_i'', b_-i) / n aggregated over b_i'' on
    the grid and on the other bids, so with max it never depends on b_i and
    the total can exceed the payments. min is also capped by the surplus at
    the realized profile, which keeps the mechanism budget balanced; the cap
    only binds where the probes miss the minimum over [0, 1].
    """
    if aggregation is ReverseFix.OFF:
        return outcome

    batch_size, n = bids.shape
    grid = uniform_grid(grid_resolution)
    aggregate = np.max if aggregation is ReverseFix.MAX else np.min
    cap = np.full(batch_size, np.inf)
    if aggregation is ReverseFix.MIN:
        cap = np.maximum(outcome.revenue - outcome.total_redistribution, 0.0)

    redistribution = outcome.redistribution.copy()
    for bidder in range(n):
        others = np.delete(bids, bidder, axis=1)
        probes = np.concatenate(
            (np.broadcast_to(grid, (batch_size, grid.size)), others), axis=1
        )
        n_probes = probes.shape[1]

        surplus = np.empty((batch_size, n_probes))
        for chunk in _chunks(batch_size, n_probes * n * (fix_grid_resolution + n)):
            profiles = _replaced(bids[chunk], bidder, probes[chunk])
            surplus[chunk] = _surplus(
                program, profiles, n_items, fix_grid_resolution
            ).reshape(-1, n_probes)
        add_back = np.minimum(aggregate(surplus, axis=1), cap)
        redistribution[:, bidder] += add_back / n

    logger.debug(
        f"Reverse waterfill ({aggregation.value}) added "
        f"{float(np.mean(redistribution.sum(axis=1) - outcome.total_redistribution))}"
        " on average"
    )
    return OutcomeBatch(outcome.allocation, outcome.payments, redistribution)


def reverse_waterfill(
    outcome: MechanismOutcome,
    program: HeuristicProgram,
    bids: Sequence[float],
    n_items: int,
    grid_resolution: int,
    aggregation: ReverseFix,
    fix_grid_resolution: int = 101,
) -> MechanismOutcome:
    profile = np.asarray([bids], dtype=float)
    allocation = np.zeros(profile.shape, dtype=bool)
    allocation[0, sorted(outcome.winners)] = True
    batch = OutcomeBatch(
        allocation,
        np.asarray([outcome.payments], dtype=float),
        np.asarray([outcome.redistribution], dtype=float),
    )
    return reverse_waterfill_batch(
        batch,
        program,
        profile,
        n_items,
        grid_resolution,
        aggregation,
        fix_grid_resolution,
    ).outcome(0)
