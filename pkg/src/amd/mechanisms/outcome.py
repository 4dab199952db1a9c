from dataclasses import dataclass
from typing import Self

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
BoolArray = npt.NDArray[np.bool_]


@dataclass(frozen=True, slots=True)
class MechanismOutcome:
    """Allocation, payments and redistribution for one bid profile"""

    winners: frozenset[int]
    payments: tuple[float, ...]
    redistribution: tuple[float, ...]

    @property
    def revenue(self) -> float:
        return sum(self.payments)

    @property
    def total_redistribution(self) -> float:
        return sum(self.redistribution)

    def to_dict(self) -> dict[str, object]:
        return {
            "winners": sorted(self.winners),
            "payments": list(self.payments),
            "redistribution": list(self.redistribution),
        }


@dataclass(frozen=True, eq=False)
class OutcomeBatch:
    """Outcomes for a batch of profiles, as (B, n) arrays"""

    allocation: BoolArray
    payments: FloatArray
    redistribution: FloatArray

    def __post_init__(self) -> None:
        assert self.allocation.shape == self.payments.shape
        assert self.payments.shape == self.redistribution.shape

    @classmethod
    def without_redistribution(
        cls, allocation: BoolArray, payments: FloatArray
    ) -> Self:
        return cls(allocation, payments, np.zeros_like(payments))

    def __len__(self) -> int:
        return self.payments.shape[0]

    @property
    def revenue(self) -> FloatArray:
        return self.payments.sum(axis=1)

    @property
    def total_redistribution(self) -> FloatArray:
        return self.redistribution.sum(axis=1)

    def outcome(self, index: int) -> MechanismOutcome:
        return MechanismOutcome(
            winners=frozenset(int(i) for i in np.flatnonzero(self.allocation[index])),
            payments=tuple(float(p) for p in self.payments[index]),
            redistribution=tuple(float(r) for r in self.redistribution[index]),
        )
