import csv
import math
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from amd.distributions import MULTI_DISTRIBUTION_SET, Beta, Uniform, default_grid
from amd.dsl import (
    HeuristicProgram,
    joint_allocation_signature,
    parse,
    per_bidder_signature,
    redistribution_signature,
)
from amd.evaluation import (
    REJECTED_SCORE,
    EvaluationReport,
    Evaluator,
    SettingMismatchError,
    score,
    score_across_distributions,
    score_distillation,
    score_redistribution,
    score_revenue,
    write_per_sample_csv,
)
from amd.mechanisms.goal import Metric, tabulate
from amd.mechanisms.settings import (
    Distillation,
    RediscoveryPerBidder,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
)
from amd.mechanisms.vcg import ReverseFix


def per_bidder_program(expression: str) -> HeuristicProgram:
    return parse(f"def heuristic(v): return {expression}", per_bidder_signature())


def redistribution_program(expression: str, n_bidders: int = 4) -> HeuristicProgram:
    return parse(
        f"def heuristic(others_bids): return {expression}",
        redistribution_signature(n_bidders),
    )


CAVALLO = redistribution_program("0.5 * min(others_bids)")
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
NEVER_SELL = parse(
    "def heuristic(bids): return [0, 0, 1]", joint_allocation_signature(2)
)


def test_score_redistribution_cavallo() -> None:
    report = score_redistribution(CAVALLO, VcgRedistribution(), 3000, seed=0)
    assert not report.rejected
    assert report.score == pytest.approx(0.5, abs=0.02)
    assert report.per_sample is not None
    assert report.per_sample.shape == (3000,)
    assert report.score == np.mean(report.per_sample)


def test_score_redistribution_zero() -> None:
    report = score_redistribution(
        redistribution_program("0"), VcgRedistribution(), 500, seed=1
    )
    assert report.score == 0.0


def test_score_redistribution_capped_by_payments() -> None:
    """Rebates after the fix never exceed the expected VCG payments"""
    report = score_redistribution(
        redistribution_program("10"), VcgRedistribution(), 1000, seed=2
    )
    assert not report.rejected
    # Σ payments is twice the third highest of four uniform bids
    assert 0 <= report.score <= 0.8 + 0.03


def test_score_redistribution_reverse_fix() -> None:
    setting = VcgRedistribution(reverse_fix=ReverseFix.MIN, reverse_grid_resolution=6)
    plain = score_redistribution(CAVALLO, VcgRedistribution(), 100, seed=3)
    reversed_fix = score_redistribution(CAVALLO, setting, 100, seed=3)
    assert plain.score <= reversed_fix.score <= 1.0


def test_score_redistribution_stable_in_batch_size() -> None:
    setting = VcgRedistribution()
    small = score_redistribution(CAVALLO, setting, 3000, seed=4)
    large = score_redistribution(CAVALLO, setting, 6000, seed=4)
    assert small.per_sample is not None
    standard_error = np.std(small.per_sample) / math.sqrt(3000)
    assert abs(large.score - small.score) < 2 * standard_error


def test_score_revenue_rediscovers_myerson() -> None:
    report = score_revenue(VIRTUAL_VALUATION, RediscoveryPerBidder(), 10_000, seed=0)
    assert report.score == pytest.approx(5 / 12, abs=0.01)


@pytest.mark.parametrize(
    "program, setting",
    (
        (per_bidder_program("-1"), RediscoveryPerBidder()),
        (NEVER_SELL, SingleItemRevenue()),
    ),
)
def test_score_revenue_never_sells(
    program: HeuristicProgram, setting: SingleItemRevenue | RediscoveryPerBidder
) -> None:
    assert score_revenue(program, setting, 1000, seed=5).score == 0.0


def test_score_revenue_sigmoid_reserve() -> None:
    """A 0.5 reserve with second price payments earns 5/12 on uniform bids"""
    report = score_revenue(SIGMOID, SingleItemRevenue(), 10_000, seed=6)
    assert report.score == pytest.approx(5 / 12, abs=0.01)


@pytest.mark.parametrize(
    "program, reason",
    (
        (per_bidder_program("log(v - 0.5)"), "DomainError"),
        (per_bidder_program("1 / (v - v)"), "DomainError"),
        (per_bidder_program("sqrt(pdf(v) - 2)"), "DomainError"),
    ),
)
def test_score_revenue_rejects(program: HeuristicProgram, reason: str) -> None:
    report = score_revenue(program, RediscoveryPerBidder(), 200, seed=7)
    assert report.rejected
    assert report.score == REJECTED_SCORE
    assert report.rejection_reason is not None
    assert report.rejection_reason.startswith(reason)
    assert report.per_sample is None


def test_score_needs_distribution_in_grid_setting() -> None:
    """The correlated grid has no marginal for pdf and cdf to use"""
    program = parse(
        "def heuristic(bids): return [cdf(bids[0]), cdf(bids[1]), 0]",
        joint_allocation_signature(2),
    )
    setting = SingleItemRevenue(distribution=default_grid())
    assert score_revenue(program, setting, 100, seed=8).rejected


@pytest.mark.parametrize(
    "program, setting",
    (
        (CAVALLO, RediscoveryPerBidder()),
        (VIRTUAL_VALUATION, VcgRedistribution()),
        (redistribution_program("0", n_bidders=3), VcgRedistribution()),
    ),
)
def test_score_signature_mismatch(
    program: HeuristicProgram,
    setting: RediscoveryPerBidder | VcgRedistribution,
) -> None:
    with pytest.raises(SettingMismatchError):
        score(program, setting, 100, seed=0)


def test_score_distillation_constant_goal() -> None:
    goal = tabulate(lambda points: np.full(points.shape[0], 0.3), [[0, 1]] * 3)
    setting = Distillation(goal=goal, metric=Metric.L2)
    report = score_distillation(redistribution_program("0"), setting, 500, seed=0)
    assert report.score == pytest.approx(-0.09)

    setting = Distillation(goal=goal, metric=Metric.L1)
    report = score_distillation(redistribution_program("0"), setting, 500, seed=0)
    assert report.score == pytest.approx(-0.3)


def test_score_distillation_exact_on_grid() -> None:
    setting = Distillation(sample_on_grid=True)
    report = score_distillation(CAVALLO, setting, 2000, seed=1)
    assert report.score == pytest.approx(0.0, abs=1e-12)


def test_score_distillation_off_grid() -> None:
    """Between grid points only the interpolation error remains"""
    report = score_distillation(CAVALLO, Distillation(), 2000, seed=2)
    assert -1e-3 <= report.score <= 0.0

    zero = score_distillation(redistribution_program("0"), Distillation(), 2000, seed=2)
    assert zero.score < report.score


def test_score_distillation_per_bidder() -> None:
    goal = tabulate(lambda points: 2 * points[:, 0] - 1, [[0, 0.5, 1]])
    setting = Distillation(inner=RediscoveryPerBidder(), goal=goal)
    assert score(VIRTUAL_VALUATION, setting, 500, seed=3).score == pytest.approx(
        0.0, abs=1e-12
    )
    assert score(per_bidder_program("v"), setting, 500, seed=3).score < -0.01


def test_score_distillation_joint_allocation() -> None:
    goal = tabulate(
        lambda points: np.column_stack((points, np.zeros(points.shape[0]))),
        [[0, 1], [0, 1]],
    )
    setting = Distillation(inner=SingleItemRevenue(), goal=goal, metric=Metric.L1)
    identity = parse(
        "def heuristic(bids): return [bids[0], bids[1], 0]",
        joint_allocation_signature(2),
    )
    assert score(identity, setting, 500, seed=4).score == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize(
    "program, setting, n_samples",
    (
        (CAVALLO, VcgRedistribution(), 1200),
        (VIRTUAL_VALUATION, RediscoveryPerBidder(), 1700),
        (SIGMOID, SingleItemRevenue(), 1100),
        (CAVALLO, Distillation(), 1300),
    ),
)
def test_score_independent_of_workers(
    program: HeuristicProgram,
    setting: SettingSpec,
    n_samples: int,
) -> None:
    serial = score(program, setting, n_samples, seed=9)
    parallel = score(program, setting, n_samples, seed=9, workers=4)
    again = score(program, setting, n_samples, seed=9, workers=3)
    assert serial == parallel == again
    assert np.array_equal(serial.per_sample, parallel.per_sample)


def test_score_across_distributions() -> None:
    program = per_bidder_program("2 * v - 1")
    setting = RediscoveryPerBidder()
    marginals = (Uniform(), Beta(2, 2))

    combined = score_across_distributions(program, setting, marginals, 2000, seed=0)
    separate = [
        score(program, RediscoveryPerBidder(marginal=marginal), 2000, seed=0).score
        for marginal in marginals
    ]
    assert combined.per_distribution == tuple(separate)
    assert combined.score == pytest.approx(sum(separate) / 2)


def test_score_across_distributions_rejects_on_any() -> None:
    # pdf is 1 everywhere on the uniform distribution but smaller on the others
    program = per_bidder_program("sqrt(pdf(v) - 1)")
    assert not score(program, RediscoveryPerBidder(), 100, seed=0).rejected

    report = score_across_distributions(
        program, RediscoveryPerBidder(), MULTI_DISTRIBUTION_SET, 100, seed=0
    )
    assert report.rejected
    assert report.rejection_reason is not None
    assert report.rejection_reason.startswith("beta(2,5)")


def test_score_across_distributions_redistribution() -> None:
    report = score_across_distributions(
        CAVALLO, Distillation(), (Uniform(), Beta(2, 5)), 500, seed=0
    )
    assert len(report.per_distribution) == 2


def test_score_across_no_distributions() -> None:
    with pytest.raises(ValueError):
        score_across_distributions(CAVALLO, VcgRedistribution(), (), 100, seed=0)


def test_write_per_sample_csv(tmp_path: Path) -> None:
    report = score_redistribution(CAVALLO, VcgRedistribution(), 50, seed=0)
    path = tmp_path / "samples.csv"
    write_per_sample_csv(report, path)

    with path.open("r", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["sample_index", "score_component"]
    assert len(rows) == 51
    assert [int(row[0]) for row in rows[1:]] == list(range(50))
    assert report.per_sample is not None
    assert [float(row[1]) for row in rows[1:]] == report.per_sample.tolist()


def test_write_per_sample_csv_rejected(tmp_path: Path) -> None:
    report = EvaluationReport.rejection(10, 0, "DomainError: log")
    with pytest.raises(ValueError):
        write_per_sample_csv(report, tmp_path / "samples.csv")


def test_report_to_dict() -> None:
    rejected = EvaluationReport.rejection(10, 3, "ShapeError: length")
    assert rejected.to_dict() == {
        "score": None,
        "n_samples": 10,
        "seed": 3,
        "rejected": True,
        "rejection_reason": "ShapeError: length",
        "per_distribution": [],
    }
    assert EvaluationReport(0.5, 10, 3).to_dict()["score"] == 0.5


def test_evaluator_caches_by_canonical_text() -> None:
    evaluator = Evaluator(VcgRedistribution(), n_samples=200, seed=0)
    spaced = redistribution_program("0.5*min( others_bids )")

    with patch("amd.evaluation.score", wraps=score) as patched_score:
        first = evaluator.evaluate(CAVALLO)
        second = evaluator.evaluate(spaced)
        assert patched_score.call_count == 1

        evaluator.evaluate_with(CAVALLO, 200, seed=1)
        assert patched_score.call_count == 2

    assert first is second


def test_evaluator_multiple_distributions() -> None:
    evaluator = Evaluator(
        RediscoveryPerBidder(),
        n_samples=500,
        seed=0,
        marginals=(Uniform(), Beta(2, 5)),
    )
    report = evaluator.evaluate(VIRTUAL_VALUATION)
    assert len(report.per_distribution) == 2


def test_evaluator_invalid_samples() -> None:
    with pytest.raises(ValueError):
        Evaluator(VcgRedistribution(), n_samples=0, seed=0)
