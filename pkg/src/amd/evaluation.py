"""
Monte Carlo scoring of heuristics

A heuristic's score is the sample mean of one value per bid profile: revenue,
total redistribution or the negated distance to a goal function. Any
evaluation error on any profile rejects the heuristic.
"""

import csv
import dataclasses
import logging
import math
import threading
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Self

import numpy as np
from cachetools import LRUCache

from amd import distributions
from amd.distributions import MarginalDistribution
from amd.dsl import EvaluationError, HeuristicProgram, evaluate_batch, pretty_print
from amd.mechanisms.outcome import FloatArray
from amd.mechanisms.settings import (
    Distillation,
    RediscoveryPerBidder,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
    setting_signature,
)
from amd.mechanisms.single_item import solve_single_item_batch
from amd.mechanisms.vcg import (
    corrected_fix_batch,
    others_sorted,
    reverse_waterfill_batch,
)

logger = logging.getLogger(__name__)

# Ordered below every finite score
REJECTED_SCORE = -math.inf

DEFAULT_REVENUE_SAMPLES = 10_000
DEFAULT_REDISTRIBUTION_SAMPLES = 3000

# Profiles per unit of work handed to the worker pool
CHUNK_SIZE = 500

PerSampleFunction = Callable[[FloatArray], FloatArray]


@dataclass(frozen=True, slots=True)
class EvaluationReport:
    score: float
    n_samples: int
    seed: int
    rejection_reason: str | None = None
    rejection_kind: str | None = None
    per_sample: FloatArray | None = field(default=None, repr=False, compare=False)
    per_distribution: tuple[float, ...] = ()

    @property
    def rejected(self) -> bool:
        return self.rejection_reason is not None

    @classmethod
    def rejection(
        cls,
        n_samples: int,
        seed: int,
        reason: str,
        kind: str = EvaluationError.__name__,
    ) -> Self:
        return cls(
            score=REJECTED_SCORE,
            n_samples=n_samples,
            seed=seed,
            rejection_reason=reason,
            rejection_kind=kind,
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "score": None if self.rejected else self.score,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "rejected": self.rejected,
            "rejection_reason": self.rejection_reason,
            "per_distribution": list(self.per_distribution),
        }


class SettingMismatchError(ValueError):
    """Exception raised when a program doesn't have the setting's signature"""


def _check_signature(program: HeuristicProgram, setting: SettingSpec) -> None:
    expected = setting_signature(setting)
    if program.signature != expected:
        raise SettingMismatchError(
            f"Program has signature {program.signature}, setting needs {expected}"
        )


def _chunks(size: int) -> list[slice]:
    return [slice(start, start + CHUNK_SIZE) for start in range(0, size, CHUNK_SIZE)]


def _per_sample_values(
    function: PerSampleFunction, inputs: FloatArray, workers: int
) -> FloatArray:
    """
    Apply function to fixed chunks of inputs and join the results in order

    The chunking doesn't depend on workers, so neither does the result. The
    first failing chunk (in chunk order) raises.
    """
    chunks = [inputs[chunk] for chunk in _chunks(inputs.shape[0])]
    if workers <= 1 or len(chunks) <= 1:
        return np.concatenate([function(chunk) for chunk in chunks])

    with ThreadPoolExecutor(max_workers=workers) as executor:
        return np.concatenate(list(executor.map(function, chunks)))


def _report(
    function: PerSampleFunction,
    inputs: FloatArray,
    n_samples: int,
    seed: int,
    workers: int,
) -> EvaluationReport:
    try:
        values = _per_sample_values(function, inputs, workers)
    except EvaluationError as e:
        reason = f"{type(e).__name__}: {e}"
        logger.debug(f"Rejected heuristic: {reason}")
        return EvaluationReport.rejection(
            n_samples, seed, reason, kind=type(e).__name__
        )

    return EvaluationReport(
        score=float(np.mean(values)),
        n_samples=n_samples,
        seed=seed,
        per_sample=values,
    )


def score_revenue(
    program: HeuristicProgram,
    setting: SingleItemRevenue | RediscoveryPerBidder,
    n_samples: int = DEFAULT_REVENUE_SAMPLES,
    seed: int = 0,
    workers: int = 1,
) -> EvaluationReport:
    """Expected revenue of the single item auction the heuristic induces"""
    _check_signature(program, setting)
    bids = distributions.sample(
        setting.distribution, setting.n_bidders, n_samples, seed
    ).profiles
    marginal = setting.marginal

    def revenue(chunk: FloatArray) -> FloatArray:
        return solve_single_item_batch(
            program, chunk, setting.epsilon, marginal
        ).revenue

    return _report(revenue, bids, n_samples, seed, workers)


def score_redistribution(
    program: HeuristicProgram,
    setting: VcgRedistribution,
    n_samples: int = DEFAULT_REDISTRIBUTION_SAMPLES,
    seed: int = 0,
    workers: int = 1,
) -> EvaluationReport:
    """Expected total rebate after the budget balance fixes"""
    _check_signature(program, setting)
    bids = distributions.sample(
        setting.marginal, setting.n_bidders, n_samples, seed
    ).profiles

    def total_redistribution(chunk: FloatArray) -> FloatArray:
        outcome = corrected_fix_batch(
            program, chunk, setting.n_items, setting.fix_grid_resolution
        )
        outcome = reverse_waterfill_batch(
            outcome,
            program,
            chunk,
            setting.n_items,
            setting.reverse_grid_resolution,
            setting.reverse_fix,
            fix_grid_resolution=setting.fix_grid_resolution,
        )
        return outcome.total_redistribution

    return _report(total_redistribution, bids, n_samples, seed, workers)


def distillation_inputs(
    setting: Distillation, n_samples: int, seed: int
) -> FloatArray:
    """
    Heuristic inputs for distillation, shape (n_samples, goal dimension)

    Off the grid these are drawn from the inner setting: one value for
    per-bidder scores, a bid profile for joint allocation and the sorted
    bids of everyone but the first bidder for redistribution.
    """
    if setting.sample_on_grid:
        points = setting.goal.grid_points()
        rng = np.random.default_rng(seed)
        return points[rng.integers(points.shape[0], size=n_samples)]

    inner = setting.inner
    match inner:
        case RediscoveryPerBidder():
            return distributions.sample(inner.marginal, 1, n_samples, seed).profiles
        case SingleItemRevenue():
            return distributions.sample(
                inner.distribution, inner.n_bidders, n_samples, seed
            ).profiles
        case VcgRedistribution():
            profiles = distributions.sample(
                inner.marginal, inner.n_bidders, n_samples, seed
            ).profiles
            return others_sorted(profiles, 0)


def score_distillation(
    program: HeuristicProgram,
    setting: Distillation,
    n_samples: int = DEFAULT_REDISTRIBUTION_SAMPLES,
    seed: int = 0,
    workers: int = 1,
) -> EvaluationReport:
    """Negated mean distance between the heuristic and the goal function"""
    _check_signature(program, setting)
    inputs = distillation_inputs(setting, n_samples, seed)
    per_bidder = not program.signature.vector_input
    marginal = setting.inner.marginal

    def negated_distance(chunk: FloatArray) -> FloatArray:
        heuristic_input = chunk[:, 0] if per_bidder else chunk
        outputs = evaluate_batch(program, heuristic_input, distribution=marginal)
        return -setting.metric.distance(outputs, setting.goal(chunk))

    return _report(negated_distance, inputs, n_samples, seed, workers)


def score(
    program: HeuristicProgram,
    setting: SettingSpec,
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> EvaluationReport:
    match setting:
        case SingleItemRevenue() | RediscoveryPerBidder():
            return score_revenue(program, setting, n_samples, seed, workers)
        case VcgRedistribution():
            return score_redistribution(program, setting, n_samples, seed, workers)
        case Distillation():
            return score_distillation(program, setting, n_samples, seed, workers)


def with_distribution(
    setting: SettingSpec, distribution: MarginalDistribution
) -> SettingSpec:
    """The same setting with bidder values drawn from distribution"""
    match setting:
        case SingleItemRevenue():
            return dataclasses.replace(setting, distribution=distribution)
        case RediscoveryPerBidder() | VcgRedistribution():
            return dataclasses.replace(setting, marginal=distribution)
        case Distillation():
            inner = with_distribution(setting.inner, distribution)
            assert not isinstance(inner, Distillation)
            return dataclasses.replace(setting, inner=inner)


def score_across_distributions(
    program: HeuristicProgram,
    setting: SettingSpec,
    marginals: Sequence[MarginalDistribution],
    n_samples: int,
    seed: int,
    workers: int = 1,
) -> EvaluationReport:
    """
    Unweighted mean of the scores under each distribution

    A rejection under any distribution rejects the heuristic.
    """
    if not marginals:
        raise ValueError("Need at least one distribution")

    scores = []
    for marginal in marginals:
        report = score(
            program, with_distribution(setting, marginal), n_samples, seed, workers
        )
        if report.rejected:
            assert report.rejection_reason is not None
            reason = (
                f"{distributions.distribution_id(marginal)}: "
                f"{report.rejection_reason}"
            )
            kind = report.rejection_kind or EvaluationError.__name__
            return EvaluationReport.rejection(n_samples, seed, reason, kind=kind)
        scores.append(report.score)

    return EvaluationReport(
        score=float(np.mean(scores)),
        n_samples=n_samples,
        seed=seed,
        per_distribution=tuple(scores),
    )


def write_per_sample_csv(report: EvaluationReport, path: Path) -> None:
    """Write one row per sample with its contribution to the score"""
    if report.per_sample is None:
        raise ValueError("Report has no per-sample values")

    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(("sample_index", "score_component"))
        for index, value in enumerate(report.per_sample.tolist()):
            writer.writerow((index, repr(value)))


class Evaluator:
    """
    Scores heuristics for the evolution loop

    The seed is fixed, so every candidate sees the same profiles. Reports are
    cached by the canonical program text.
    """

    def __init__(
        self,
        setting: SettingSpec,
        n_samples: int,
        seed: int,
        workers: int = 1,
        marginals: Sequence[MarginalDistribution] = (),
        cache_size: int = 4096,
    ) -> None:
        if n_samples < 1:
            raise ValueError(f"Need at least one sample, got {n_samples}")

        self.setting = setting
        self.n_samples = n_samples
        self.seed = seed
        self.workers = workers
        self.marginals = tuple(marginals)

        self._cache = LRUCache[tuple[str, int, int], EvaluationReport](
            maxsize=cache_size
        )
        # LRUCache is not thread-safe
        self._mutex = threading.Lock()

    def evaluate(self, program: HeuristicProgram) -> EvaluationReport:
        return self.evaluate_with(program, self.n_samples, self.seed)

    def evaluate_with(
        self, program: HeuristicProgram, n_samples: int, seed: int
    ) -> EvaluationReport:
        """Score program on n_samples profiles drawn with seed"""
        key = (pretty_print(program), n_samples, seed)
        with self._mutex:
            cached = self._cache.get(key, None)
        if cached is not None:
            logger.debug(f"Using cached score for {key[0]!r}")
            return cached

        if self.marginals:
            report = score_across_distributions(
                program, self.setting, self.marginals, n_samples, seed, self.workers
            )
        else:
            report = score(program, self.setting, n_samples, seed, self.workers)

        with self._mutex:
            self._cache[key] = report
        return report
