"""
Brute force checks of the design criteria and small exhaustive searches

The criteria are checked on a finite grid of bid profiles. A mechanism is any
function mapping a (B, n) batch of bids to an OutcomeBatch. Its outcomes are
tabulated once on every profile of the grid; the utility of a misreport is
then read off the table, since a deviation to a grid bid is another grid
profile.
"""

import functools
import hashlib
import itertools
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from amd import distributions
from amd.dsl import DslError, EvaluationError, HeuristicProgram, SignatureKind, parse
from amd.dsl.expr import DISTRIBUTION_BUILTINS, BinOp, Call, Expr, Function, Num, Var
from amd.dsl.interpreter import evaluate_expression
from amd.dsl.printing import format_function
from amd.evaluation import DEFAULT_REVENUE_SAMPLES, Evaluator, distillation_inputs
from amd.mechanisms.outcome import FloatArray, OutcomeBatch
from amd.mechanisms.settings import (
    Distillation,
    InnerSetting,
    RediscoveryPerBidder,
    SettingError,
    SettingSpec,
    SingleItemRevenue,
    VcgRedistribution,
    setting_signature,
)
from amd.mechanisms.single_item import (
    allocate_at_prices,
    price_grid,
    solve_single_item_batch,
    suffix_min_critical_prices,
)
from amd.mechanisms.vcg import (
    corrected_fix_batch,
    others_sorted,
    redistribution_batch,
    reverse_waterfill_batch,
    vcg_unit_demand_batch,
)
from amd.proposers.symbolic import grammar_for

logger = logging.getLogger(__name__)

Mechanism = Callable[[FloatArray], OutcomeBatch]

# Tolerance for the pass/fail verdict, absorbs floating point accumulation
DEFAULT_TOLERANCE = 1e-6

DEFAULT_GRID_STEP = 0.1

# Profiles handed to the mechanism at once while tabulating
TABLE_CHUNK = 50_000

MAX_GRID_PROFILES = 2_000_000

DEFAULT_MAX_CANDIDATES = 500_000

# Value vectors are compared at this many decimals when pruning
EQUIVALENCE_DECIMALS = 12


class SpaceTooLargeError(ValueError):
    """Exception raised when a search or grid exceeds its enumeration cap"""


@dataclass(frozen=True, slots=True)
class GridSpec:
    """Bid profiles on a step grid of [0, 1], deviations on their own grid"""

    n_bidders: int
    step: float = DEFAULT_GRID_STEP
    deviation_step: float | None = None

    def __post_init__(self) -> None:
        if self.n_bidders < 1:
            raise ValueError(f"Need at least one bidder, got {self.n_bidders}")
        for step in (self.step, self.deviation_step):
            if step is not None and not 0 < step <= 1:
                raise ValueError(f"Grid steps must lie in (0, 1], got {step}")

    @property
    def profile_values(self) -> FloatArray:
        return price_grid(self.step)

    @property
    def deviation_values(self) -> FloatArray:
        if self.deviation_step is None:
            return self.profile_values
        return price_grid(self.deviation_step)

    @property
    def n_profiles(self) -> int:
        return int(self.profile_values.size) ** self.n_bidders

    def to_dict(self) -> dict[str, object]:
        return {
            "n_bidders": self.n_bidders,
            "step": self.step,
            "deviation_step": (
                self.step if self.deviation_step is None else self.deviation_step
            ),
            "n_profiles": self.n_profiles,
        }


@dataclass(frozen=True, slots=True)
class OutcomeTable:
    """Outcomes on every profile of values^n, profiles in C order"""

    values: FloatArray
    outcomes: OutcomeBatch

    @property
    def n_bidders(self) -> int:
        return self.outcomes.payments.shape[1]

    def per_bidder(self, field: str, bidder: int) -> FloatArray:
        """bidder's column as an array indexed by (own bid, other profile)"""
        column = getattr(self.outcomes, field)[:, bidder].astype(float)
        cube = column.reshape((self.values.size,) * self.n_bidders)
        return np.moveaxis(cube, bidder, 0).reshape(self.values.size, -1)


def _indices(values: FloatArray, subset: FloatArray) -> np.ndarray:
    return np.searchsorted(values, subset)


def tabulate(mechanism: Mechanism, n_bidders: int, values: FloatArray) -> OutcomeTable:
    """Run the mechanism on every profile in values^n"""
    n_profiles = values.size**n_bidders
    if n_profiles > MAX_GRID_PROFILES:
        raise SpaceTooLargeError(
            f"Grid has {n_profiles} profiles, the cap is {MAX_GRID_PROFILES}"
        )

    mesh = np.meshgrid(*([values] * n_bidders), indexing="ij")
    profiles = np.stack(mesh, axis=-1).reshape(-1, n_bidders)

    batches = [
        mechanism(profiles[start : start + TABLE_CHUNK])
        for start in range(0, n_profiles, TABLE_CHUNK)
    ]
    outcomes = OutcomeBatch(
        np.concatenate([batch.allocation for batch in batches]),
        np.concatenate([batch.payments for batch in batches]),
        np.concatenate([batch.redistribution for batch in batches]),
    )
    logger.debug(f"Tabulated {n_profiles} profiles of {n_bidders} bidders")
    return OutcomeTable(values, outcomes)


def _restricted(table: OutcomeTable, grid: FloatArray) -> OutcomeTable:
    """The sub-table of profiles whose bids all lie on grid"""
    index = _indices(table.values, grid)
    n = table.n_bidders
    flat = np.ravel_multi_index(
        tuple(np.meshgrid(*([index] * n), indexing="ij")),
        (table.values.size,) * n,
    ).ravel()
    outcomes = table.outcomes
    return OutcomeTable(
        grid,
        OutcomeBatch(
            outcomes.allocation[flat],
            outcomes.payments[flat],
            outcomes.redistribution[flat],
        ),
    )


def _other_profiles(table: OutcomeTable, own: np.ndarray) -> np.ndarray:
    """Flat indices of the profiles of the other bidders, each bidding on own"""
    n = table.n_bidders
    if n == 1:
        return np.zeros(1, dtype=np.intp)
    return np.ravel_multi_index(
        tuple(np.meshgrid(*([own] * (n - 1)), indexing="ij")),
        (table.values.size,) * (n - 1),
    ).ravel()


def _regret(
    table: OutcomeTable, profile_values: FloatArray, deviation_values: FloatArray
) -> float:
    own = _indices(table.values, profile_values)
    reports = _indices(table.values, deviation_values)
    others = _other_profiles(table, own)

    regret = 0.0
    for bidder in range(table.n_bidders):
        allocation = table.per_bidder("allocation", bidder)[:, others]
        net_payment = (
            table.per_bidder("payments", bidder)
            - table.per_bidder("redistribution", bidder)
        )[:, others]

        # (true value, report, other profile)
        utility = allocation[None] * profile_values[:, None, None] - net_payment[None]
        truthful = utility[np.arange(own.size), own]
        gain = utility[:, reports].max(axis=1) - truthful
        regret = max(regret, float(gain.max()))

    return regret


def regret_grid(
    mechanism: Mechanism,
    n_bidders: int,
    profile_values: FloatArray,
    deviation_values: FloatArray | None = None,
) -> float:
    """
    Largest utility gain from misreporting over the grid

    Every bidder at every profile of profile_values^n may report any of
    deviation_values instead of their value. Utility is value times
    allocation minus payment plus redistribution.
    """
    if deviation_values is None:
        deviation_values = profile_values
    values = np.union1d(profile_values, deviation_values)
    table = tabulate(mechanism, n_bidders, values)
    return _regret(table, np.unique(profile_values), np.unique(deviation_values))


def _wbb_violation(outcomes: OutcomeBatch) -> float:
    excess = outcomes.total_redistribution - outcomes.revenue
    return max(0.0, float(excess.max()))


def wbb_check(
    mechanism: Mechanism, n_bidders: int, profile_values: FloatArray
) -> float:
    """Largest total redistribution in excess of the payments, at least 0"""
    return _wbb_violation(tabulate(mechanism, n_bidders, profile_values).outcomes)


def _truthful_utility(table: OutcomeTable) -> FloatArray:
    n = table.n_bidders
    mesh = np.meshgrid(*([table.values] * n), indexing="ij")
    bids = np.stack(mesh, axis=-1).reshape(-1, n)
    outcomes = table.outcomes
    return bids * outcomes.allocation - outcomes.payments + outcomes.redistribution


def _ir_feasibility(table: OutcomeTable, n_items: int) -> tuple[float, bool, float]:
    outcomes = table.outcomes
    min_redistribution = float(outcomes.redistribution.min())
    feasible = bool((outcomes.allocation.sum(axis=1) <= n_items).all())
    ir_violation = max(0.0, float(-_truthful_utility(table).min()))
    return min_redistribution, feasible, ir_violation


def ir_feasibility_check(
    mechanism: Mechanism,
    n_bidders: int,
    profile_values: FloatArray,
    n_items: int = 1,
) -> tuple[float, bool]:
    """Smallest redistribution and whether at most n_items are ever allocated"""
    table = tabulate(mechanism, n_bidders, profile_values)
    min_redistribution, feasible, _ = _ir_feasibility(table, n_items)
    return min_redistribution, feasible


@dataclass(frozen=True, slots=True)
class CriteriaReport:
    max_regret: float
    max_wbb_violation: float
    min_redistribution: float
    feasibility_ok: bool
    max_ir_violation: float
    grid: GridSpec

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return (
            self.max_regret <= tolerance
            and self.max_wbb_violation <= tolerance
            and self.min_redistribution >= -tolerance
            and self.max_ir_violation <= tolerance
            and self.feasibility_ok
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "max_regret": self.max_regret,
            "max_wbb_violation": self.max_wbb_violation,
            "min_redistribution": self.min_redistribution,
            "feasibility_ok": self.feasibility_ok,
            "max_ir_violation": self.max_ir_violation,
            "passed": self.passed(),
            "grid": self.grid.to_dict(),
        }


def single_item_mechanism(
    program: HeuristicProgram, setting: SingleItemRevenue | RediscoveryPerBidder
) -> Mechanism:
    def mechanism(bids: FloatArray) -> OutcomeBatch:
        return solve_single_item_batch(
            program, bids, setting.epsilon, setting.marginal
        )

    return mechanism


def fixed_redistribution_mechanism(
    program: HeuristicProgram, setting: VcgRedistribution
) -> Mechanism:
    """VCG with the rebates passed through the setting's fixes"""

    def mechanism(bids: FloatArray) -> OutcomeBatch:
        outcome = corrected_fix_batch(
            program, bids, setting.n_items, setting.fix_grid_resolution
        )
        return reverse_waterfill_batch(
            outcome,
            program,
            bids,
            setting.n_items,
            setting.reverse_grid_resolution,
            setting.reverse_fix,
            fix_grid_resolution=setting.fix_grid_resolution,
        )

    return mechanism


def raw_redistribution_mechanism(program: HeuristicProgram, n_items: int) -> Mechanism:
    """VCG with the heuristic's rebates as they are"""

    def mechanism(bids: FloatArray) -> OutcomeBatch:
        allocation, payments = vcg_unit_demand_batch(bids, n_items)
        return OutcomeBatch(allocation, payments, redistribution_batch(program, bids))

    return mechanism


def _inner(setting: SettingSpec) -> InnerSetting:
    return setting.inner if isinstance(setting, Distillation) else setting


def setting_mechanism(program: HeuristicProgram, setting: SettingSpec) -> Mechanism:
    """The mechanism the evaluator scores program with"""
    inner = _inner(setting)
    match inner:
        case SingleItemRevenue() | RediscoveryPerBidder():
            return single_item_mechanism(program, inner)
        case VcgRedistribution():
            return fixed_redistribution_mechanism(program, inner)


def _n_items(setting: InnerSetting) -> int:
    if isinstance(setting, VcgRedistribution):
        return setting.n_items
    return 1


def verify(
    program: HeuristicProgram,
    setting: SettingSpec,
    step: float = DEFAULT_GRID_STEP,
    deviation_step: float | None = None,
    mechanism: Mechanism | None = None,
) -> CriteriaReport:
    """Check every design criterion of program's mechanism on one grid"""
    inner = _inner(setting)
    grid = GridSpec(inner.n_bidders, step, deviation_step)
    if mechanism is None:
        mechanism = setting_mechanism(program, setting)

    values = np.union1d(grid.profile_values, grid.deviation_values)
    table = tabulate(mechanism, grid.n_bidders, values)
    on_grid = _restricted(table, grid.profile_values)
    min_redistribution, feasible, ir_violation = _ir_feasibility(
        on_grid, _n_items(inner)
    )

    report = CriteriaReport(
        max_regret=_regret(table, grid.profile_values, grid.deviation_values),
        max_wbb_violation=_wbb_violation(on_grid.outcomes),
        min_redistribution=min_redistribution,
        feasibility_ok=feasible,
        max_ir_violation=ir_violation,
        grid=grid,
    )
    logger.info(f"Verified {program.source!r}: {report.to_dict()}")
    return report


@dataclass(frozen=True, slots=True)
class SearchResult:
    program: HeuristicProgram
    score: float
    n_enumerated: int
    n_distinct: int


def _search_setting(setting: SettingSpec) -> None:
    kind = setting_signature(setting).kind
    if kind is SignatureKind.JOINT_ALLOCATION:
        raise SettingError("Exhaustive search needs per-bidder or rebate heuristics")


def _probe_points(setting: SettingSpec, n_samples: int, seed: int) -> FloatArray:
    """The inputs the evaluator feeds the heuristic"""
    inner = _inner(setting)
    if isinstance(setting, Distillation):
        inputs = distillation_inputs(setting, n_samples, seed)
        return inputs[:, 0] if inputs.shape[1] == 1 else inputs

    bids = distributions.sample(inner.marginal, inner.n_bidders, n_samples, seed)
    if isinstance(inner, RediscoveryPerBidder):
        return np.concatenate((bids.profiles.ravel(), price_grid(inner.epsilon)))
    return np.concatenate(
        [others_sorted(bids.profiles, i) for i in range(inner.n_bidders)]
    )


def _candidate_count(n_unary: int, n_binary: int, last: int, older: int) -> int:
    """Expressions whose deepest operand was found at the previous level"""
    return n_unary * last + n_binary * (last * last + 2 * last * older)


# Stand-ins for already evaluated operands
_LEFT = Var("left")
_RIGHT = Var("right")


class _Enumerator:
    """
    Distinct expressions in order of depth

    A new node is evaluated on its operands' stored values, so each candidate
    costs one operation. Values are only kept while they can still be operands.
    """

    def __init__(
        self,
        setting: SettingSpec,
        constants: Sequence[float],
        probes: FloatArray,
        max_candidates: int,
        score_values: Callable[[FloatArray], float] | None = None,
    ) -> None:
        grammar = grammar_for(setting)
        self.parameter = grammar.parameter
        self.unary = tuple(f for f in grammar.unary if f in DISTRIBUTION_BUILTINS)
        self.binary = grammar.binary
        self.leaves = (*grammar.input_terminals(), *(Num(c) for c in constants))
        self.marginal = _inner(setting).marginal
        self.probes = probes
        self.max_candidates = max_candidates
        self.score_values = score_values

        self.seen: set[bytes] = set()
        self.expressions: list[Expr] = []
        self.outputs: list[FloatArray] = []
        self.scores: list[float] = []
        self.keep_outputs = True
        self.n_enumerated = 0

    def offer(self, expr: Expr, node: Expr, env: Mapping[str, FloatArray]) -> None:
        """Record expr unless an earlier expression has the same values"""
        self.n_enumerated += 1
        try:
            values = evaluate_expression(
                node, env, self.probes.shape[0], distribution=self.marginal
            )
        except EvaluationError:
            return
        if values.ndim != 1:
            return

        rounded = np.round(values, EQUIVALENCE_DECIMALS)
        key = hashlib.blake2b(rounded.tobytes(), digest_size=16).digest()
        if key in self.seen:
            return
        self.seen.add(key)
        self.expressions.append(expr)
        if self.keep_outputs:
            self.outputs.append(values)
        if self.score_values is not None:
            self.scores.append(self.score_values(values))

    def level(self, last: range, older: range, final: bool) -> range:
        count = _candidate_count(
            len(self.unary), len(self.binary), len(last), len(older)
        )
        if self.n_enumerated + count > self.max_candidates:
            raise SpaceTooLargeError(
                f"Enumerating {self.n_enumerated + count} candidates exceeds "
                f"the cap of {self.max_candidates}"
            )

        self.keep_outputs = not final
        expressions, outputs = self.expressions, self.outputs
        start = len(expressions)
        for func in self.unary:
            node = Call(func, (_LEFT,))
            for i in last:
                env = {_LEFT.name: outputs[i]}
                self.offer(Call(func, (expressions[i],)), node, env)

        pairs = itertools.chain(
            itertools.product(last, last),
            itertools.product(last, older),
            itertools.product(older, last),
        )
        for i, j in pairs:
            env = {_LEFT.name: outputs[i], _RIGHT.name: outputs[j]}
            for op in self.binary:
                expr = BinOp(op, expressions[i], expressions[j])
                self.offer(expr, BinOp(op, _LEFT, _RIGHT), env)
        return range(start, len(expressions))

    def run(self, depth: int) -> None:
        env = {self.parameter: self.probes}
        for leaf in self.leaves:
            self.offer(leaf, leaf, env)

        last = range(len(self.expressions))
        for current in range(1, depth + 1):
            found = self.level(last, range(last.start), final=current == depth)
            logger.debug(f"Depth {current}: {len(found)} new distinct expressions")
            last = found


def per_bidder_revenue(
    values: FloatArray, bids: FloatArray, setting: RediscoveryPerBidder
) -> float:
    """
    Expected revenue from a per-bidder heuristic's values at the probe points

    values holds the heuristic at every bid of bids (row-major) followed by
    the price grid, which is everything the evaluator computes the revenue
    from.
    """
    n_samples, n = bids.shape
    grid = price_grid(setting.epsilon)
    size = n_samples * n

    scores = np.concatenate(
        (values[:size].reshape(n_samples, n), np.zeros((n_samples, 1))), axis=1
    )
    winners = np.argmax(scores, axis=1)
    grid_scores = np.broadcast_to(values[size:], (n, grid.size))
    prices = suffix_min_critical_prices(grid_scores, scores, winners, grid)
    return float(np.mean(allocate_at_prices(bids, winners, prices).revenue))


def _as_program(expr: Expr, parameter: str, setting: SettingSpec) -> HeuristicProgram:
    source = format_function(Function((parameter,), expr))
    return parse(source, setting_signature(setting))


def exhaustive_small_search(
    setting: SettingSpec,
    depth: int,
    constants: Sequence[float] = (0.0, 1.0),
    n_samples: int = DEFAULT_REVENUE_SAMPLES,
    seed: int = 0,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    workers: int = 1,
) -> SearchResult:
    """
    Score every small expression and return the best

    Depth 0 holds the input terminals and the constants; depth d adds
    pdf/cdf/survival (when a distribution is visible) of depth d - 1
    expressions and the arithmetic operators joining two expressions of which
    the deeper has depth d - 1. Expressions with the same values on every
    input the evaluator uses are scored once; the first enumerated wins ties.
    """
    if depth < 0:
        raise ValueError(f"depth must be at least 0, got {depth}")
    _search_setting(setting)

    probes = _probe_points(setting, n_samples, seed)
    score_values: Callable[[FloatArray], float] | None = None
    if isinstance(setting, RediscoveryPerBidder):
        bids = distributions.sample(
            setting.marginal, setting.n_bidders, n_samples, seed
        ).profiles
        score_values = functools.partial(
            per_bidder_revenue, bids=bids, setting=setting
        )

    enumerator = _Enumerator(setting, constants, probes, max_candidates, score_values)
    enumerator.run(depth)
    parameter = enumerator.parameter

    if score_values is not None:
        scores = enumerator.scores
    else:
        evaluator = Evaluator(setting, n_samples, seed, workers)
        scores = []
        for expr in enumerator.expressions:
            try:
                program = _as_program(expr, parameter, setting)
            except DslError:
                scores.append(-math.inf)
                continue
            scores.append(evaluator.evaluate(program).score)

    if not scores or max(scores) == -math.inf:
        raise ValueError("No enumerated expression could be scored")

    best = int(np.argmax(scores))
    result = SearchResult(
        program=_as_program(enumerator.expressions[best], parameter, setting),
        score=scores[best],
        n_enumerated=enumerator.n_enumerated,
        n_distinct=len(enumerator.expressions),
    )
    logger.info(
        f"Exhaustive search to depth {depth}: best {result.program.source!r} "
        f"scores {result.score} among {result.n_distinct} distinct of "
        f"{result.n_enumerated} enumerated"
    )
    return result
