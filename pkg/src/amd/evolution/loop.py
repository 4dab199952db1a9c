"""
The evolution loop

Each iteration samples parents from one island, asks the proposer for a
candidate, parses and scores it and registers it in the parents' island.
Rejected candidates are counted by reason and never stop the run.
"""

import csv
import json
import logging
import time
from collections import Counter
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from enum import Enum, unique
from pathlib import Path
from typing import Any, Self

import numpy as np

from amd.dsl import (
    DslError,
    HeuristicProgram,
    HeuristicSignature,
    SignatureKind,
    parse,
)
from amd.evaluation import Evaluator
from amd.evolution.config import EvolutionConfig, ResetClock
from amd.evolution.database import (
    DatabaseDecodeError,
    DatabaseReadError,
    ProgramDatabase,
    ScoredProgram,
)
from amd.mechanisms.settings import SettingSpec
from amd.proposers.base import (
    Parent,
    ProposalRejectedError,
    ProposalRequest,
    Proposer,
    ProposerUnavailableError,
)

logger = logging.getLogger(__name__)

DATABASE_FILENAME = "database.jsonl"
STATE_FILENAME = "state.json"

# Width of the trailing window in the trace, one full strategy cycle
TRACE_WINDOW = 5

PROPOSAL_REJECTED = "ProposalRejected"


class SeedRejectedError(ValueError):
    """Exception raised when the seed heuristic can't be scored"""


@unique
class TerminationReason(str, Enum):
    BUDGET_EXHAUSTED = "budget_exhausted"
    TARGET_REACHED = "target_reached"
    TIME_LIMIT = "time_limit"
    PROPOSER_UNAVAILABLE = "proposer_unavailable"


def naive_seed_source(signature: HeuristicSignature) -> str:
    """A heuristic that does nothing: no rebates, no score, no sale"""
    if signature.kind is SignatureKind.JOINT_ALLOCATION:
        assert signature.input_length is not None
        # The last entry is the no-sale option and must win strictly
        outputs = ", ".join(["0"] * signature.input_length + ["1"])
        return f"def heuristic({signature.parameter_name}): return [{outputs}]"
    return f"def heuristic({signature.parameter_name}): return 0"


@dataclass(frozen=True, slots=True)
class TraceRow:
    iteration: int
    best_so_far: float
    best_last5: float | None
    score: float | None  # None when the candidate was rejected

    def to_csv_row(self) -> tuple[str, ...]:
        return (
            str(self.iteration),
            repr(self.best_so_far),
            "" if self.best_last5 is None else repr(self.best_last5),
            "" if self.score is None else repr(self.score),
        )

    @classmethod
    def from_csv_row(cls, row: Sequence[str]) -> Self:
        iteration, best_so_far, best_last5, score = row
        return cls(
            iteration=int(iteration),
            best_so_far=float(best_so_far),
            best_last5=float(best_last5) if best_last5 else None,
            score=float(score) if score else None,
        )


TRACE_HEADER = ("iteration", "best_so_far", "best_last5", "score")


def write_trace_csv(trace: Sequence[TraceRow], path: Path) -> None:
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_HEADER)
        writer.writerows(row.to_csv_row() for row in trace)


def read_trace_csv(path: Path) -> list[TraceRow]:
    with path.open("r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or tuple(header) != TRACE_HEADER:
            raise ValueError(f"{path} is not a trace file")
        return [TraceRow.from_csv_row(row) for row in reader]


@dataclass
class RunState:
    """Everything besides the database needed to continue a run exactly"""

    rng: np.random.Generator
    iteration: int = 0
    elapsed_seconds: float = 0.0
    trace: list[TraceRow] = field(default_factory=list)
    rejections: Counter[str] = field(default_factory=Counter)

    @classmethod
    def new(cls, seed: int) -> Self:
        return cls(rng=np.random.default_rng(seed))

    def to_dict(self, database: ProgramDatabase) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "elapsed_seconds": self.elapsed_seconds,
            "rng_state": self.rng.bit_generator.state,
            "trace": [list(row.to_csv_row()) for row in self.trace],
            "rejections": dict(self.rejections),
            "best_so_far": None if database.best is None else database.best.score,
            "total_registered": database.total_registered,
            "last_reset": database.last_reset,
            "duplicates": database.duplicates,
        }

    @classmethod
    def from_dict(cls, source: dict[str, Any]) -> Self:
        try:
            rng = np.random.default_rng()
            rng.bit_generator.state = source["rng_state"]
            return cls(
                rng=rng,
                iteration=int(source["iteration"]),
                elapsed_seconds=float(source["elapsed_seconds"]),
                trace=[TraceRow.from_csv_row(row) for row in source["trace"]],
                rejections=Counter(
                    {str(k): int(v) for k, v in source["rejections"].items()}
                ),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise DatabaseDecodeError(f"Invalid run state: {e}") from e


def save_checkpoint(
    directory: Path, database: ProgramDatabase, state: RunState
) -> None:
    """Write the database and the run state to directory"""
    database.save(directory / DATABASE_FILENAME)
    with (directory / STATE_FILENAME).open("w") as f:
        json.dump(state.to_dict(database), f, indent=2)
    logger.debug(f"Checkpoint at iteration {state.iteration} written to {directory}")


def load_checkpoint(
    directory: Path,
    signature: HeuristicSignature,
    config: EvolutionConfig,
    n_strategies: int,
) -> tuple[ProgramDatabase, RunState]:
    """Restore a run from the files save_checkpoint wrote"""
    path = directory / STATE_FILENAME
    try:
        with path.open("r") as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise DatabaseDecodeError(
                    f"Failed to parse run state at {path=}"
                ) from e
    except OSError as e:
        raise DatabaseReadError(f"Failed to read run state at {path=}") from e

    if not isinstance(raw, dict):
        raise DatabaseDecodeError("Run state must be a json object")

    state = RunState.from_dict(raw)
    try:
        total_registered = int(raw["total_registered"])
        last_reset = float(raw["last_reset"])
        duplicates = int(raw["duplicates"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatabaseDecodeError(f"Invalid run state: {e}") from e

    database = ProgramDatabase.load(
        directory / DATABASE_FILENAME,
        signature,
        config,
        n_strategies,
        total_registered=total_registered,
        last_reset=last_reset,
        duplicates=duplicates,
    )
    return database, state


@dataclass(frozen=True, slots=True)
class RunReport:
    best: ScoredProgram
    trace: tuple[TraceRow, ...]
    rejections: dict[str, int]
    iterations: int
    termination: TerminationReason
    duplicates: int = 0

    def summary(self) -> dict[str, object]:
        return {
            "best_score": self.best.score,
            "best_source": self.best.source,
            "iterations": self.iterations,
            "termination": self.termination.value,
            "rejections": dict(sorted(self.rejections.items())),
            "duplicates": self.duplicates,
        }


def seed_database(
    database: ProgramDatabase, evaluator: Evaluator, source: str | None
) -> ScoredProgram:
    """Score the seed heuristic and put one copy on every island"""
    program = parse(source or naive_seed_source(database.signature), database.signature)
    report = evaluator.evaluate(program)
    if report.rejected:
        raise SeedRejectedError(f"Seed heuristic rejected: {report.rejection_reason}")

    for _ in database.islands:
        database.register(program, report.score)

    best = database.best
    assert best is not None
    logger.info(f"Seeded {len(database.islands)} islands, score {report.score}")
    return best


def _propose(
    proposer: Proposer,
    request: ProposalRequest,
    rng: np.random.Generator,
    config: EvolutionConfig,
    sleep: Callable[[float], None],
) -> str:
    """Ask the proposer, pausing while it is unavailable"""
    pauses = 0
    while True:
        try:
            return proposer.propose(request, rng)
        except ProposerUnavailableError as e:
            if pauses >= config.unavailable_pauses:
                raise
            pauses += 1
            logger.error(
                f"Proposer unavailable ({e}), pausing for {config.pause_seconds}s "
                f"({pauses}/{config.unavailable_pauses})"
            )
            sleep(config.pause_seconds)


def _termination(
    config: EvolutionConfig, state: RunState, database: ProgramDatabase
) -> TerminationReason | None:
    if config.max_iterations is not None and state.iteration >= config.max_iterations:
        return TerminationReason.BUDGET_EXHAUSTED
    best = database.best
    if (
        config.target_score is not None
        and best is not None
        and best.score >= config.target_score
    ):
        return TerminationReason.TARGET_REACHED
    if config.max_seconds is not None and state.elapsed_seconds >= config.max_seconds:
        return TerminationReason.TIME_LIMIT
    return None


def _evaluate_candidate(
    source: str,
    database: ProgramDatabase,
    evaluator: Evaluator,
    state: RunState,
) -> tuple[HeuristicProgram, float] | None:
    """Parse and score a candidate, recording the reason if it is rejected"""
    try:
        program = parse(source, database.signature)
    except DslError as e:
        logger.debug(f"Rejected candidate: {type(e).__name__}: {e}")
        state.rejections[type(e).__name__] += 1
        return None

    report = evaluator.evaluate(program)
    if report.rejected:
        state.rejections[report.rejection_kind or "EvaluationError"] += 1
        return None

    return program, report.score


def run(
    database: ProgramDatabase,
    setting: SettingSpec,
    proposer: Proposer,
    evaluator: Evaluator,
    state: RunState,
    *,
    strategies: Sequence[str] = (),
    checkpoint: Callable[[ProgramDatabase, RunState], None] | None = None,
    clock: Callable[[], float] = time.monotonic,
    sleep: Callable[[float], None] = time.sleep,
) -> RunReport:
    """
    Evolve heuristics until a stop condition of the database's config is met

    An empty database is seeded first. state is updated in place, so after an
    interrupt it holds the progress so far. checkpoint is called every
    checkpoint_every iterations.
    """
    config = database.config
    if len(strategies) != database.n_strategies:
        raise ValueError(
            f"Got {len(strategies)} strategies for a database cycling "
            f"{database.n_strategies}"
        )

    if len(database) == 0:
        seed_database(database, evaluator, config.seed_source)

    start = clock()
    elapsed_at_start = state.elapsed_seconds
    logger.info(f"Starting evolution at iteration {state.iteration}")

    while (termination := _termination(config, state, database)) is None:
        iteration = state.iteration
        island = iteration % config.num_islands
        parents, strategy_id = database.sample_parents(
            island, config.functions_per_prompt, state.rng, iteration=iteration
        )
        request = ProposalRequest(
            parents=tuple(Parent(scored.program, scored.score) for scored in parents),
            setting=setting,
            version=len(parents),
            strategy_id=strategy_id,
            strategy=None if strategy_id is None else strategies[strategy_id - 1],
        )

        score: float | None = None
        try:
            source = _propose(proposer, request, state.rng, config, sleep)
        except ProposerUnavailableError as e:
            logger.error(f"Proposer unavailable, stopping the run: {e}")
            termination = TerminationReason.PROPOSER_UNAVAILABLE
            break
        except ProposalRejectedError as e:
            logger.debug(f"Proposal rejected: {e.reason}")
            state.rejections[PROPOSAL_REJECTED] += 1
        else:
            candidate = _evaluate_candidate(source, database, evaluator, state)
            if candidate is not None:
                program, score = candidate
                previous_best = database.best
                database.register(
                    program,
                    score,
                    parents=parents,
                    iteration=iteration,
                    strategy_id=strategy_id,
                )
                if previous_best is None or score > previous_best.score:
                    logger.info(f"New best score {score} at iteration {iteration}")

        state.iteration += 1
        state.elapsed_seconds = elapsed_at_start + clock() - start

        now = (
            state.elapsed_seconds
            if config.reset_clock is ResetClock.WALL
            else float(state.iteration)
        )
        if database.reset_due(now):
            database.reset_islands(now, iteration=iteration)

        best = database.best
        assert best is not None
        window = [row.score for row in state.trace[-(TRACE_WINDOW - 1) :]] + [score]
        scores = [value for value in window if value is not None]
        state.trace.append(
            TraceRow(
                iteration=iteration,
                best_so_far=best.score,
                best_last5=max(scores) if scores else None,
                score=score,
            )
        )

        if checkpoint is not None and state.iteration % config.checkpoint_every == 0:
            checkpoint(database, state)

    assert termination is not None
    best = database.best
    assert best is not None
    logger.info(
        f"Evolution stopped after {state.iteration} iterations ({termination.value}), "
        f"best score {best.score}"
    )
    return RunReport(
        best=best,
        trace=tuple(state.trace),
        rejections=dict(state.rejections),
        iterations=state.iteration,
        termination=termination,
        duplicates=database.duplicates,
    )
