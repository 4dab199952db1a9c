from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum, unique
from typing import Self, TypeVar

from amd.proposers.prompts import StrategyPreset


class EvolutionConfigError(ValueError):
    """Exception raised when the evolution config is invalid"""


@unique
class ResetClock(str, Enum):
    """What reset_period is measured in"""

    WALL = "wall"  # Seconds of run time
    ITERATIONS = "iterations"


@dataclass(frozen=True, slots=True)
class EvolutionConfig:
    """
    Hyperparameters of the island search

    Cluster sampling uses the temperature
    max(temperature_floor, temperature_init * (1 - registered / decay_horizon)).
    The run stops at the first of max_iterations, target_score and
    max_seconds that is reached; None disables a stop condition.
    seed_source None means the naive heuristic for the setting.
    """

    num_islands: int = 10
    reset_period: float = 3600.0
    reset_clock: ResetClock = ResetClock.WALL
    reset_fraction: float = 0.5
    temperature_init: float = 0.1
    temperature_floor: float = 0.0
    decay_horizon: int = 30_000
    functions_per_prompt: int = 2
    strategy_preset: StrategyPreset = StrategyPreset.DEFAULT
    max_iterations: int | None = 1000
    target_score: float | None = None
    max_seconds: float | None = None
    seed_source: str | None = None
    unavailable_pauses: int = 3
    pause_seconds: float = 60.0
    checkpoint_every: int = 50

    def __post_init__(self) -> None:
        if self.num_islands < 2:
            raise EvolutionConfigError("num_islands must be at least 2")
        if self.reset_period <= 0:
            raise EvolutionConfigError("reset_period must be positive")
        if not 0 < self.reset_fraction < 1:
            raise EvolutionConfigError("reset_fraction must lie in (0, 1)")
        if not 0 <= self.temperature_floor <= self.temperature_init:
            raise EvolutionConfigError(
                "Need 0 <= temperature_floor <= temperature_init"
            )
        if self.decay_horizon < 1:
            raise EvolutionConfigError("decay_horizon must be positive")
        if self.functions_per_prompt < 1:
            raise EvolutionConfigError("functions_per_prompt must be at least 1")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise EvolutionConfigError("max_iterations can't be negative")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise EvolutionConfigError("max_seconds must be positive")
        if self.unavailable_pauses < 0:
            raise EvolutionConfigError("unavailable_pauses can't be negative")
        if self.pause_seconds < 0:
            raise EvolutionConfigError("pause_seconds can't be negative")
        if self.checkpoint_every < 1:
            raise EvolutionConfigError("checkpoint_every must be at least 1")

    @property
    def reset_count(self) -> int:
        """How many islands a reset clears"""
        count = int(self.num_islands * self.reset_fraction)
        return min(self.num_islands - 1, max(1, count))

    @classmethod
    def from_dict(cls, source: Mapping[str, object]) -> Self:
        """Build a config from its dict form, missing keys take their defaults"""
        unknown = set(source) - set(DEFAULTS)
        if unknown:
            raise EvolutionConfigError(f"Unknown evolution keys: {sorted(unknown)}")

        return cls(
            num_islands=_int(source, "num_islands"),
            reset_period=_float(source, "reset_period"),
            reset_clock=_enum(source, "reset_clock", ResetClock),
            reset_fraction=_float(source, "reset_fraction"),
            temperature_init=_float(source, "temperature_init"),
            temperature_floor=_float(source, "temperature_floor"),
            decay_horizon=_int(source, "decay_horizon"),
            functions_per_prompt=_int(source, "functions_per_prompt"),
            strategy_preset=_enum(source, "strategy_preset", StrategyPreset),
            max_iterations=_optional_int(source, "max_iterations"),
            target_score=_optional_float(source, "target_score"),
            max_seconds=_optional_float(source, "max_seconds"),
            seed_source=_optional_str(source, "seed_source"),
            unavailable_pauses=_int(source, "unavailable_pauses"),
            pause_seconds=_float(source, "pause_seconds"),
            checkpoint_every=_int(source, "checkpoint_every"),
        )

    def to_dict(self) -> dict[str, object]:
        return {
            "num_islands": self.num_islands,
            "reset_period": self.reset_period,
            "reset_clock": self.reset_clock.value,
            "reset_fraction": self.reset_fraction,
            "temperature_init": self.temperature_init,
            "temperature_floor": self.temperature_floor,
            "decay_horizon": self.decay_horizon,
            "functions_per_prompt": self.functions_per_prompt,
            "strategy_preset": self.strategy_preset.value,
            "max_iterations": self.max_iterations,
            "target_score": self.target_score,
            "max_seconds": self.max_seconds,
            "seed_source": self.seed_source,
            "unavailable_pauses": self.unavailable_pauses,
            "pause_seconds": self.pause_seconds,
            "checkpoint_every": self.checkpoint_every,
        }


DEFAULT_EVOLUTION_CONFIG = EvolutionConfig()

DEFAULTS = DEFAULT_EVOLUTION_CONFIG.to_dict()


def _is_number(value: object) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _int(source: Mapping[str, object], key: str) -> int:
    value = source.get(key, DEFAULTS[key])
    if not isinstance(value, int) or isinstance(value, bool):
        raise EvolutionConfigError(f"Evolution key {key!r} must be an integer")
    return value


def _float(source: Mapping[str, object], key: str) -> float:
    value = source.get(key, DEFAULTS[key])
    if not _is_number(value):
        raise EvolutionConfigError(f"Evolution key {key!r} must be a number")
    assert isinstance(value, (int, float))
    return float(value)


def _optional_int(source: Mapping[str, object], key: str) -> int | None:
    if source.get(key, DEFAULTS[key]) is None:
        return None
    return _int(source, key)


def _optional_float(source: Mapping[str, object], key: str) -> float | None:
    if source.get(key, DEFAULTS[key]) is None:
        return None
    return _float(source, key)


def _optional_str(source: Mapping[str, object], key: str) -> str | None:
    value = source.get(key, DEFAULTS[key])
    if value is not None and not isinstance(value, str):
        raise EvolutionConfigError(f"Evolution key {key!r} must be a string")
    return value


E = TypeVar("E", bound=Enum)


def _enum(source: Mapping[str, object], key: str, enum: type[E]) -> E:
    value = source.get(key, DEFAULTS[key])
    try:
        return enum(value)
    except ValueError as e:
        choices = ", ".join(str(member.value) for member in enum)
        raise EvolutionConfigError(
            f"Evolution key {key!r} must be one of {choices}, got {value!r}"
        ) from e


def temperature(
    total_registered: int, config: EvolutionConfig = DEFAULT_EVOLUTION_CONFIG
) -> float:
    """Cluster sampling temperature after total_registered registrations"""
    decayed = config.temperature_init * (1 - total_registered / config.decay_horizon)
    return max(config.temperature_floor, decayed)
