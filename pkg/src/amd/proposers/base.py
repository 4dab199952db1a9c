from dataclasses import dataclass
from typing import Protocol

import numpy as np

from amd.dsl import HeuristicProgram, pretty_print
from amd.mechanisms.settings import SettingSpec


class ProposalRejectedError(ValueError):
    """Exception raised when a proposer fails to produce a candidate"""

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class ProposerUnavailableError(ValueError):
    """Exception raised when a proposer can't be reached after retrying"""


@dataclass(frozen=True, slots=True)
class Parent:
    """A heuristic shown to the proposer together with its score"""

    program: HeuristicProgram
    score: float

    @property
    def source(self) -> str:
        return pretty_print(self.program)


@dataclass(frozen=True, slots=True)
class ProposalRequest:
    """
    Everything a proposer needs for one candidate

    Parents are ordered best-last. version names the function the proposer is
    asked to write.
    """

    parents: tuple[Parent, ...]
    setting: SettingSpec
    version: int
    strategy_id: int | None = None
    strategy: str | None = None

    def __post_init__(self) -> None:
        if not self.parents:
            raise ValueError("A proposal request needs at least one parent")


class Proposer(Protocol):  # pragma: no coverage
    """Produces the source text of a new candidate heuristic"""

    def propose(self, request: ProposalRequest, rng: np.random.Generator) -> str:
        raise NotImplementedError
