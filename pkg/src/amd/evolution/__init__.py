"""Island based evolutionary search over heuristics"""

from amd.evolution.config import (
    EvolutionConfig,
    EvolutionConfigError,
    ResetClock,
    StrategyPreset,
    temperature,
)
from amd.evolution.database import (
    DatabaseDecodeError,
    DatabaseReadError,
    EmptyIslandError,
    ProgramDatabase,
    ScoredProgram,
)
from amd.evolution.loop import (
    RunReport,
    RunState,
    SeedRejectedError,
    TerminationReason,
    TraceRow,
    load_checkpoint,
    run,
    save_checkpoint,
)

__all__ = [
    "DatabaseDecodeError",
    "DatabaseReadError",
    "EmptyIslandError",
    "EvolutionConfig",
    "EvolutionConfigError",
    "ProgramDatabase",
    "ResetClock",
    "RunReport",
    "RunState",
    "ScoredProgram",
    "SeedRejectedError",
    "StrategyPreset",
    "TerminationReason",
    "TraceRow",
    "load_checkpoint",
    "run",
    "save_checkpoint",
    "temperature",
]
