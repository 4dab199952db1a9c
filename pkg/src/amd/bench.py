"""
Reference mechanisms scored against published numbers

table1 is the redistribution benchmark, table2 the revenue benchmark on the
correlated grid. Every row draws fresh samples, so measured values move a
little between invocations; the bands absorb that noise.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from amd import distributions
from amd.dsl import (
    joint_allocation_signature,
    parse,
    per_bidder_signature,
    redistribution_signature,
)
from amd.evaluation import score_redistribution, score_revenue
from amd.mechanisms.myerson import myerson_optimal_batch
from amd.mechanisms.settings import (
    RediscoveryPerBidder,
    SingleItemRevenue,
    VcgRedistribution,
)

logger = logging.getLogger(__name__)

# Column separator
SEP = " " * 4

HEADER = ("mechanism", "measured", "reference", "band", "result")

CAVALLO_SOURCE = "def heuristic(others_bids): return 0.5 * min(others_bids)"

VIRTUAL_VALUATION_SOURCE = "def heuristic(v): return v - survival(v) / pdf(v)"

SIGMOID_SOURCE = """
def heuristic(bids):
    threshold = 0.5
    alloc_bidder1 = sigmoid(10 * (bids[0] - threshold))
    alloc_bidder2 = sigmoid(10 * (bids[1] - threshold))
    no_alloc = 1 - max(alloc_bidder1, alloc_bidder2)
    return [alloc_bidder1, alloc_bidder2, no_alloc]
"""

# (n_samples, seed, workers) -> measured value
Measure = Callable[[int, int, int], float]


@dataclass(frozen=True, slots=True)
class BenchCase:
    name: str
    table: str
    measure: Measure
    n_samples: int
    reference: float
    lo: float
    hi: float


@dataclass(frozen=True, slots=True)
class BenchRow:
    name: str
    measured: float
    reference: float
    lo: float
    hi: float

    @property
    def passed(self) -> bool:
        return self.lo <= self.measured <= self.hi

    def to_dict(self) -> dict[str, object]:
        return {
            "name": self.name,
            "measured": self.measured,
            "reference": self.reference,
            "lo": self.lo,
            "hi": self.hi,
            "passed": self.passed,
        }


def measure_cavallo(n_samples: int, seed: int, workers: int) -> float:
    setting = VcgRedistribution(n_bidders=4, n_items=2)
    program = parse(CAVALLO_SOURCE, redistribution_signature(setting.n_bidders))
    return score_redistribution(program, setting, n_samples, seed, workers).score


def measure_virtual_valuation(n_samples: int, seed: int, workers: int) -> float:
    program = parse(VIRTUAL_VALUATION_SOURCE, per_bidder_signature())
    setting = RediscoveryPerBidder()
    return score_revenue(program, setting, n_samples, seed, workers).score


def measure_ironed_myerson(n_samples: int, seed: int, workers: int) -> float:
    grid = distributions.default_grid()
    marginals = [distributions.marginal(grid, bidder) for bidder in (0, 1)]
    bids = distributions.sample(grid, 2, n_samples, seed).profiles
    outcome = myerson_optimal_batch(marginals, bids, ironed=True)
    return float(np.mean(outcome.revenue))


def measure_sigmoid(n_samples: int, seed: int, workers: int) -> float:
    program = parse(SIGMOID_SOURCE, joint_allocation_signature(2))
    setting = SingleItemRevenue(distribution=distributions.default_grid())
    return score_revenue(program, setting, n_samples, seed, workers).score


BENCH_CASES: tuple[BenchCase, ...] = (
    BenchCase("cavallo", "table1", measure_cavallo, 3000, 0.4935, 0.48, 0.52),
    BenchCase(
        "virtual_valuation",
        "table1",
        measure_virtual_valuation,
        100_000,
        5 / 12,
        5 / 12 - 0.01,
        5 / 12 + 0.01,
    ),
    BenchCase(
        "myerson_ironed",
        "table2",
        measure_ironed_myerson,
        3000,
        0.3857,
        0.3857 - 0.02,
        0.3857 + 0.02,
    ),
    BenchCase(
        "sigmoid_0.5",
        "table2",
        measure_sigmoid,
        3000,
        0.3857,
        0.3857 - 0.02,
        0.3857 + 0.02,
    ),
)


def run_bench(
    table: str | None,
    seed: int,
    workers: int = 1,
    n_samples: int | None = None,
    cases: Sequence[BenchCase] = BENCH_CASES,
) -> list[BenchRow]:
    """
    Measure the cases of table, or of every table if None

    n_samples overrides the sample size of every case. Each case gets its
    own seed derived from seed.
    """
    selected = [case for case in cases if table is None or case.table == table]
    seeds = np.random.SeedSequence(seed).generate_state(len(selected))

    rows = []
    for case, case_seed in zip(selected, seeds, strict=True):
        size = n_samples or case.n_samples
        logger.info(f"Measuring {case.name} on {size} samples")
        measured = case.measure(size, int(case_seed), workers)
        rows.append(BenchRow(case.name, measured, case.reference, case.lo, case.hi))
    return rows


def format_rows(rows: Sequence[BenchRow]) -> str:
    """Render the rows as a plain text table"""
    cells = [HEADER] + [
        (
            row.name,
            f"{row.measured:.4f}",
            f"{row.reference:.4f}",
            f"[{row.lo:.4f}, {row.hi:.4f}]",
            "pass" if row.passed else "FAIL",
        )
        for row in rows
    ]
    column_widths = [
        max(len(line[column_index]) for line in cells)
        for column_index in range(len(HEADER))
    ]

    lines = []
    for line in cells:
        # Left justify the first column
        lines.append(
            SEP.join(
                (str.ljust if i == 0 else str.rjust)(cell, column_widths[i])
                for i, cell in enumerate(line)
            )
        )
    return "\n".join(lines)
