"""
Island-structured archive of scored heuristics

Islands evolve in isolation and only exchange programs when the weaker ones
are reset. Inside an island programs are grouped into clusters by their score
rounded to CLUSTER_DECIMALS decimals.
"""

import json
import logging
import math
import threading
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Self

import numpy as np
import numpy.typing as npt

from amd.dsl import (
    DslError,
    HeuristicProgram,
    HeuristicSignature,
    parse,
    pretty_print,
    structural_size,
)
from amd.evolution.config import DEFAULT_EVOLUTION_CONFIG, EvolutionConfig, temperature

logger = logging.getLogger(__name__)

CLUSTER_DECIMALS = 3


class EmptyIslandError(ValueError):
    """Exception raised when sampling parents from an island without programs"""


class DatabaseReadError(ValueError):
    """Error raised when failing to read a database"""


class DatabaseDecodeError(ValueError):
    """Error raised when failing to decode a read database"""


def cluster_key(score: float) -> float:
    return round(score, CLUSTER_DECIMALS)


@dataclass(frozen=True, slots=True)
class ScoredProgram:
    program: HeuristicProgram
    score: float
    island: int
    iteration: int = 0
    parent_ids: tuple[int, ...] = ()
    strategy_id: int | None = None
    program_id: int = 0

    @property
    def cluster_key(self) -> float:
        return cluster_key(self.score)

    @property
    def source(self) -> str:
        return pretty_print(self.program)

    @property
    def rank(self) -> tuple[float, int]:
        """Sort key, higher is better; ties go to the earlier registration"""
        return (self.score, -self.program_id)

    def to_dict(self) -> dict[str, object]:
        return {
            "source": self.source,
            "score": self.score,
            "island": self.island,
            "cluster": self.cluster_key,
            "iteration": self.iteration,
            "parents": list(self.parent_ids),
            "strategy": self.strategy_id,
            "id": self.program_id,
        }

    @classmethod
    def from_dict(
        cls, source: Mapping[str, object], signature: HeuristicSignature
    ) -> Self:
        text = source.get("source")
        score = source.get("score")
        island = source.get("island")
        iteration = source.get("iteration")
        parents = source.get("parents")
        strategy = source.get("strategy")
        program_id = source.get("id")

        if not isinstance(text, str):
            raise DatabaseDecodeError("Program source must be a string")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise DatabaseDecodeError("Program score must be a number")
        if not math.isfinite(score):
            raise DatabaseDecodeError("Program score must be finite")
        for name, value in (
            ("island", island),
            ("iteration", iteration),
            ("id", program_id),
        ):
            if not isinstance(value, int) or isinstance(value, bool) or value < 0:
                raise DatabaseDecodeError(f"Program {name} must be a natural number")
        if not isinstance(parents, list) or not all(
            isinstance(parent, int) for parent in parents
        ):
            raise DatabaseDecodeError("Program parents must be a list of ids")
        if strategy is not None and not isinstance(strategy, int):
            raise DatabaseDecodeError("Program strategy must be an integer or null")

        try:
            program = parse(text, signature)
        except DslError as e:
            raise DatabaseDecodeError(f"Stored program doesn't parse: {e}") from e

        assert isinstance(island, int)
        assert isinstance(iteration, int)
        assert isinstance(program_id, int)
        return cls(
            program=program,
            score=float(score),
            island=island,
            iteration=iteration,
            parent_ids=tuple(parents),
            strategy_id=strategy,
            program_id=program_id,
        )


@dataclass
class Island:
    clusters: dict[float, list[ScoredProgram]] = field(default_factory=dict)
    sources: set[str] = field(default_factory=set)
    best: ScoredProgram | None = None

    def add(self, scored: ScoredProgram) -> None:
        self.clusters.setdefault(scored.cluster_key, []).append(scored)
        self.sources.add(scored.source)
        if self.best is None or scored.rank > self.best.rank:
            self.best = scored

    def clear(self) -> None:
        self.clusters.clear()
        self.sources.clear()
        self.best = None

    @property
    def best_score(self) -> float:
        return -math.inf if self.best is None else self.best.score

    def programs(self) -> list[ScoredProgram]:
        return [scored for cluster in self.clusters.values() for scored in cluster]

    def __len__(self) -> int:
        return sum(len(cluster) for cluster in self.clusters.values())


@dataclass(frozen=True, slots=True)
class ResetReport:
    """Islands cleared, worst first, and the founder each was re-seeded with"""

    cleared: tuple[int, ...]
    survivors: tuple[int, ...]
    founders: tuple[int, ...]


def cluster_probabilities(
    scores: npt.NDArray[np.float64], temperature: float
) -> npt.NDArray[np.float64]:
    """Softmax of scores / temperature; all mass on the first best at zero"""
    if temperature <= 0:
        probabilities = np.zeros(scores.shape[0])
        probabilities[int(np.argmax(scores))] = 1.0
        return probabilities

    # Subtract the maximum for numerical stability
    weights = np.exp((scores - scores.max()) / temperature)
    return weights / weights.sum()


class ProgramDatabase:
    """
    Scored heuristics split over isolated islands

    All public operations are serialized with a mutex. n_strategies is the
    length of the strategy cycle, 0 when strategies are disabled.
    """

    def __init__(
        self,
        signature: HeuristicSignature,
        config: EvolutionConfig = DEFAULT_EVOLUTION_CONFIG,
        n_strategies: int = 0,
        *,
        total_registered: int = 0,
        last_reset: float = 0.0,
        duplicates: int = 0,
    ) -> None:
        if n_strategies < 0:
            raise ValueError("n_strategies can't be negative")

        self.signature = signature
        self.config = config
        self.n_strategies = n_strategies
        self.islands = [Island() for _ in range(config.num_islands)]
        self.total_registered = total_registered
        self.last_reset = last_reset
        self.duplicates = duplicates
        self.mutex = threading.Lock()

    @property
    def temperature(self) -> float:
        return temperature(self.total_registered, self.config)

    @property
    def best(self) -> ScoredProgram | None:
        """The best program stored in any island"""
        bests = [island.best for island in self.islands if island.best is not None]
        if not bests:
            return None
        return max(bests, key=lambda scored: scored.rank)

    def programs(self) -> list[ScoredProgram]:
        """Every stored program in registration order"""
        with self.mutex:
            programs = [
                scored for island in self.islands for scored in island.programs()
            ]
        return sorted(programs, key=lambda scored: scored.program_id)

    def __len__(self) -> int:
        return sum(len(island) for island in self.islands)

    def register(
        self,
        program: HeuristicProgram,
        score: float,
        *,
        parents: Sequence[ScoredProgram] = (),
        iteration: int = 0,
        strategy_id: int | None = None,
        island: int | None = None,
    ) -> ScoredProgram | None:
        """
        Store a scored program, returning None if its island already has it

        Programs go to the island of their first parent. Programs without
        parents are spread over the islands round-robin.
        """
        if not math.isfinite(score):
            raise ValueError(f"Can't register program with score {score}")
        if program.signature != self.signature:
            raise ValueError(
                f"Program has signature {program.signature}, "
                f"database holds {self.signature}"
            )

        with self.mutex:
            return self._register(
                program,
                score,
                parents=parents,
                iteration=iteration,
                strategy_id=strategy_id,
                island=island,
            )

    def _register(
        self,
        program: HeuristicProgram,
        score: float,
        *,
        parents: Sequence[ScoredProgram],
        iteration: int,
        strategy_id: int | None,
        island: int | None,
    ) -> ScoredProgram | None:
        if island is None:
            if parents:
                island = parents[0].island
            else:
                island = self.total_registered % self.config.num_islands

        target = self.islands[island]
        if pretty_print(program) in target.sources:
            self.duplicates += 1
            logger.debug(f"Island {island} already has {pretty_print(program)!r}")
            return None

        scored = ScoredProgram(
            program=program,
            score=score,
            island=island,
            iteration=iteration,
            parent_ids=tuple(parent.program_id for parent in parents),
            strategy_id=strategy_id,
            program_id=self.total_registered,
        )
        target.add(scored)
        self.total_registered += 1
        return scored

    def sample_parents(
        self,
        island: int,
        k: int,
        rng: np.random.Generator,
        *,
        iteration: int = 0,
    ) -> tuple[tuple[ScoredProgram, ...], int | None]:
        """
        Pick up to k parents from one cluster of the island, ordered best-last

        The cluster is drawn by a softmax over the clusters' best scores at
        the current temperature. Within the cluster shorter programs are more
        likely, with weight 1 / structural_size. Also returns the strategy
        for this iteration.
        """
        if k < 1:
            raise ValueError(f"Need to sample at least one parent, got {k}")

        with self.mutex:
            clusters = self.islands[island].clusters
            if not clusters:
                raise EmptyIslandError(f"Island {island} has no programs")

            keys = sorted(clusters)
            scores = np.array(
                [max(scored.score for scored in clusters[key]) for key in keys]
            )
            probabilities = cluster_probabilities(scores, self.temperature)
            cluster = clusters[keys[int(rng.choice(len(keys), p=probabilities))]]

            sizes = np.array(
                [structural_size(scored.program) for scored in cluster], dtype=float
            )
            weights = 1 / sizes
            picks = rng.choice(
                len(cluster),
                size=min(k, len(cluster)),
                replace=False,
                p=weights / weights.sum(),
            )
            parents = sorted(
                (cluster[int(pick)] for pick in picks),
                key=lambda scored: scored.rank,
            )

        strategy_id = (
            iteration % self.n_strategies + 1 if self.n_strategies > 0 else None
        )
        return tuple(parents), strategy_id

    def reset_due(self, now: float) -> bool:
        """now and last_reset are in the units of the configured reset clock"""
        return now - self.last_reset >= self.config.reset_period

    def reset_islands(self, now: float, iteration: int = 0) -> ResetReport:
        """
        Clear the weaker islands and re-seed them from the survivors

        Islands are ranked by their best score, ties going to the lower
        index. Each cleared island gets a copy of the best program of a
        surviving island, handed out round-robin from the best survivor.
        """
        with self.mutex:
            ranking = sorted(
                range(len(self.islands)),
                key=lambda index: (self.islands[index].best_score, -index),
            )
            count = self.config.reset_count
            cleared = ranking[:count]
            survivors = ranking[count:][::-1]

            founders = [
                best
                for index in survivors
                if (best := self.islands[index].best) is not None
            ]
            founder_ids: list[int] = []
            for j, index in enumerate(cleared):
                self.islands[index].clear()
                if not founders:
                    continue
                founder = founders[j % len(founders)]
                self._register(
                    founder.program,
                    founder.score,
                    parents=(founder,),
                    iteration=iteration,
                    strategy_id=None,
                    island=index,
                )
                founder_ids.append(founder.program_id)

            self.last_reset = now

        logger.info(f"Reset islands {cleared}, kept {survivors}")
        return ResetReport(
            cleared=tuple(cleared),
            survivors=tuple(survivors),
            founders=tuple(founder_ids),
        )

    def save(self, path: Path) -> None:
        """Write every stored program as one json object per line"""
        with path.open("w") as f:
            for scored in self.programs():
                f.write(json.dumps(scored.to_dict()) + "\n")

    @classmethod
    def load(
        cls,
        path: Path,
        signature: HeuristicSignature,
        config: EvolutionConfig = DEFAULT_EVOLUTION_CONFIG,
        n_strategies: int = 0,
        *,
        total_registered: int | None = None,
        last_reset: float = 0.0,
        duplicates: int = 0,
    ) -> Self:
        """
        Restore a database written by save

        total_registered defaults to one past the largest stored id.
        """
        try:
            with path.open("r") as f:
                lines = f.readlines()
        except OSError as e:
            raise DatabaseReadError(f"Failed to read database at {path=}") from e

        programs: list[ScoredProgram] = []
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatabaseDecodeError(
                    f"Failed to parse line {number} of database at {path=}"
                ) from e
            if not isinstance(raw, dict):
                raise DatabaseDecodeError(f"Line {number} is not a json object")
            programs.append(ScoredProgram.from_dict(raw, signature))

        programs.sort(key=lambda scored: scored.program_id)
        next_id = programs[-1].program_id + 1 if programs else 0
        if total_registered is None:
            total_registered = next_id
        elif total_registered < next_id:
            raise DatabaseDecodeError(
                f"Database holds id {next_id - 1}, but only {total_registered} "
                "programs were registered"
            )

        database = cls(
            signature,
            config,
            n_strategies,
            total_registered=total_registered,
            last_reset=last_reset,
            duplicates=duplicates,
        )
        for scored in programs:
            if scored.island >= config.num_islands:
                raise DatabaseDecodeError(
                    f"Program {scored.program_id} is on island {scored.island}, "
                    f"but there are only {config.num_islands} islands"
                )
            database.islands[scored.island].add(scored)

        return database
