"""
Evolve auction mechanism heuristics and check them

Run from the root dir by `python -m amd <command> [--config <path>]`
"""

import dataclasses
import json
import logging
import platform
import sys
from collections.abc import Callable
from datetime import date, datetime
from enum import IntEnum, unique
from itertools import count
from pathlib import Path
from typing import Any

import numpy as np
from appdirs import AppDirs
from tendo import singleton

from amd import VERSION_STRING
from amd.bench import format_rows, run_bench
from amd.commandline import Command, Options, get_options
from amd.config import ConfigError, ProposerKind, RunConfig, read_config
from amd.dsl import DslError, HeuristicProgram, parse
from amd.evaluation import Evaluator, write_per_sample_csv
from amd.evolution.database import (
    DatabaseDecodeError,
    DatabaseReadError,
    ProgramDatabase,
)
from amd.evolution.loop import (
    STATE_FILENAME,
    RunState,
    SeedRejectedError,
    TerminationReason,
    load_checkpoint,
    run,
    save_checkpoint,
    write_trace_csv,
)
from amd.mechanisms.goal import default_goal_function, load_goal_function
from amd.mechanisms.settings import Distillation, SettingSpec, setting_signature
from amd.oracle import verify
from amd.proposers.base import Proposer
from amd.proposers.llm import LlmProposer
from amd.proposers.prompts import load_strategies
from amd.proposers.symbolic import SymbolicProposer
from amd.threading import recommend_worker_count

dirs = AppDirs(appname="amd")

CACHE_DIR = Path(dirs.user_cache_dir)
DEFAULT_RUNS_DIR = Path(dirs.user_data_dir) / "runs"

LOGDIR = Path(dirs.user_log_dir)

CONFIG_FILENAME = "config.json"
TRACE_FILENAME = "trace.csv"
BEST_PROGRAM_FILENAME = "best_program.txt"
SUMMARY_FILENAME = "summary.json"
LOCK_FILENAME = "amd.lock"

logger = logging.getLogger(__name__)


@unique
class ExitCode(IntEnum):
    OK = 0
    FAILED = 1
    CONFIG_ERROR = 2
    PROPOSER_UNAVAILABLE = 3
    INTERRUPTED = 4


class OutputDirLockedError(ValueError):
    """Exception raised when another run writes to the same output directory"""


def draw_seed() -> int:
    return int(np.random.SeedSequence().generate_state(1)[0])


def lock_output_dir(directory: Path) -> singleton.SingleInstance:
    """Only allow one run per output directory"""
    try:
        return singleton.SingleInstance(  # type: ignore [no-untyped-call]
            lockfile=str(directory / LOCK_FILENAME)
        )
    except singleton.SingleInstanceException as e:
        raise OutputDirLockedError(f"{directory} is in use by another run") from e


def load_run_config(options: Options) -> RunConfig:
    """Read the config file, if any, and apply the commandline overrides"""
    config = RunConfig() if options.config_path is None else read_config(
        options.config_path
    )

    overrides: dict[str, Any] = {}
    if options.seed is not None:
        overrides["seed"] = options.seed
    if options.out is not None:
        overrides["output_dir"] = options.out
    if options.resume:
        overrides["resume"] = True
    if options.workers is not None:
        overrides["evaluation"] = dataclasses.replace(
            config.evaluation, workers=options.workers
        )
    return dataclasses.replace(config, **overrides)


def make_proposer(config: RunConfig) -> Proposer:
    if config.proposer is ProposerKind.LLM:
        assert config.llm is not None
        return LlmProposer(config.llm)
    return SymbolicProposer()


def make_evaluator(
    config: RunConfig, setting: SettingSpec, *, test: bool = False
) -> Evaluator:
    evaluation = config.evaluation
    if test:
        n_samples = evaluation.test_samples_for(setting)
        seed = evaluation.test_seed
    else:
        n_samples = evaluation.samples_for(setting)
        seed = evaluation.seed
    return Evaluator(
        setting,
        n_samples,
        seed,
        workers=evaluation.workers or recommend_worker_count(),
        marginals=evaluation.distributions,
    )


def read_heuristic(path: Path, setting: SettingSpec) -> HeuristicProgram:
    try:
        source = path.read_text()
    except OSError as e:
        raise ConfigError(f"Could not read heuristic file {path}: {e}") from e
    return parse(source, setting_signature(setting))


def write_json(path: Path, data: object) -> None:
    with path.open("w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def cmd_run(
    config: RunConfig,
    proposer: Proposer | None = None,
    sleep: Callable[[float], None] | None = None,
) -> ExitCode:
    """Run the evolution loop and write its artifacts to the output directory"""
    seed = config.seed
    if seed is None:
        seed = draw_seed()
        print(f"Using seed {seed}")
    logger.info(f"Using seed {seed}")
    config = dataclasses.replace(config, seed=seed)

    output_dir = config.output_dir
    if output_dir is None:
        timestamp = datetime.now().strftime("%Y-%m-%dT%H-%M-%S")
        output_dir = DEFAULT_RUNS_DIR / f"{timestamp}_{seed}"
    output_dir.mkdir(parents=True, exist_ok=True)
    config = dataclasses.replace(config, output_dir=output_dir)

    lock = lock_output_dir(output_dir)

    setting = config.setting
    signature = setting_signature(setting)
    strategies = load_strategies(config.evolution.strategy_preset)
    evaluator = make_evaluator(config, setting)

    if config.resume:
        if not (output_dir / STATE_FILENAME).exists():
            raise ConfigError(f"No checkpoint to resume in {output_dir}")
        try:
            database, state = load_checkpoint(
                output_dir, signature, config.evolution, len(strategies)
            )
        except (DatabaseReadError, DatabaseDecodeError) as e:
            raise ConfigError(f"Could not resume from {output_dir}: {e}") from e
        logger.info(f"Resuming from iteration {state.iteration} in {output_dir}")
    else:
        database = ProgramDatabase(signature, config.evolution, len(strategies))
        state = RunState.new(seed)

    write_json(output_dir / CONFIG_FILENAME, config.to_dict())

    def checkpoint(database: ProgramDatabase, state: RunState) -> None:
        save_checkpoint(output_dir, database, state)
        write_trace_csv(state.trace, output_dir / TRACE_FILENAME)

    run_kwargs: dict[str, Any] = {} if sleep is None else {"sleep": sleep}
    try:
        report = run(
            database,
            setting,
            proposer or make_proposer(config),
            evaluator,
            state,
            strategies=strategies,
            checkpoint=checkpoint,
            **run_kwargs,
        )
    except SeedRejectedError as e:
        logger.error(str(e))
        print(e, file=sys.stderr)
        return ExitCode.FAILED
    except KeyboardInterrupt:
        if len(database) > 0:
            checkpoint(database, state)
        logger.warning(f"Interrupted at iteration {state.iteration}")
        print(f"Interrupted, progress saved to {output_dir}", file=sys.stderr)
        return ExitCode.INTERRUPTED

    checkpoint(database, state)
    (output_dir / BEST_PROGRAM_FILENAME).write_text(report.best.source + "\n")

    test_report = make_evaluator(config, setting, test=True).evaluate(
        report.best.program
    )
    summary = report.summary() | {
        "seed": seed,
        "test_score": None if test_report.rejected else test_report.score,
    }
    write_json(output_dir / SUMMARY_FILENAME, summary)
    print(json.dumps(summary, indent=2))

    # Release the output directory
    del lock

    if report.termination is TerminationReason.PROPOSER_UNAVAILABLE:
        return ExitCode.PROPOSER_UNAVAILABLE
    return ExitCode.OK


def cmd_eval(
    config: RunConfig, heuristic_path: Path, per_sample_path: Path | None = None
) -> ExitCode:
    """Score one heuristic on the test samples"""
    try:
        program = read_heuristic(heuristic_path, config.setting)
    except DslError as e:
        print(f"Heuristic rejected: {type(e).__name__}: {e}", file=sys.stderr)
        return ExitCode.FAILED

    report = make_evaluator(config, config.setting, test=True).evaluate(program)
    print(json.dumps(report.to_dict(), indent=2))

    if per_sample_path is not None:
        try:
            write_per_sample_csv(report, per_sample_path)
        except ValueError as e:
            print(f"Could not write per-sample values: {e}", file=sys.stderr)
            return ExitCode.FAILED

    return ExitCode.FAILED if report.rejected else ExitCode.OK


def cmd_verify(config: RunConfig, heuristic_path: Path, step: float) -> ExitCode:
    """Check the mechanism a heuristic induces on a value grid"""
    try:
        program = read_heuristic(heuristic_path, config.setting)
    except DslError as e:
        print(f"Heuristic rejected: {type(e).__name__}: {e}", file=sys.stderr)
        return ExitCode.FAILED

    try:
        report = verify(program, config.setting, step=step)
    except ValueError as e:
        raise ConfigError(f"Can't verify on this grid: {e}") from e

    print(json.dumps(report.to_dict(), indent=2))
    if config.output_dir is not None:
        config.output_dir.mkdir(parents=True, exist_ok=True)
        write_json(config.output_dir / "verify.json", report.to_dict())

    return ExitCode.OK if report.passed() else ExitCode.FAILED


def cmd_bench(table: str | None, seed: int | None, workers: int | None) -> ExitCode:
    """Print the reference mechanisms next to the published numbers"""
    if seed is None:
        seed = draw_seed()
        print(f"Using seed {seed}")

    rows = run_bench(table, seed, workers or recommend_worker_count())
    print(format_rows(rows))
    return ExitCode.OK


def distillation_config(config: RunConfig, goal_path: Path | None) -> RunConfig:
    """The config with its setting wrapped to match the goal function"""
    setting = config.setting
    if isinstance(setting, Distillation):
        if goal_path is None:
            return config
        inner = setting.inner
    else:
        inner = setting

    try:
        if goal_path is None:
            goal = default_goal_function()
        else:
            goal = load_goal_function(goal_path)
        distillation = Distillation(
            inner=inner,
            goal=goal,
            goal_path=None if goal_path is None else str(goal_path),
        )
    except (OSError, ValueError) as e:
        raise ConfigError(f"Could not set up distillation: {e}") from e

    return dataclasses.replace(config, setting=distillation)


def cmd_distill(config: RunConfig, goal_path: Path | None) -> ExitCode:
    """Evolve heuristics that match the goal function"""
    return cmd_run(distillation_config(config, goal_path))


def run_command(options: Options) -> ExitCode:
    """Dispatch to the subcommand, mapping failures to exit codes"""
    try:
        config = load_run_config(options)

        match options.command:
            case Command.RUN:
                return cmd_run(config)
            case Command.DISTILL:
                return cmd_distill(config, options.goal_path)
            case Command.EVAL:
                assert options.heuristic_path is not None
                return cmd_eval(config, options.heuristic_path, options.per_sample_path)
            case Command.VERIFY:
                assert options.heuristic_path is not None
                return cmd_verify(config, options.heuristic_path, options.step)
            case Command.BENCH:
                return cmd_bench(
                    options.table, options.seed, config.evaluation.workers
                )
    except (ConfigError, OutputDirLockedError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"Configuration error: {e}", file=sys.stderr)
        return ExitCode.CONFIG_ERROR


def setup(
    loglevel: int = logging.WARNING, log_prefix: str = ""
) -> None:  # pragma: nocover
    """Set up directory structure and logging"""
    CACHE_DIR.mkdir(parents=True, exist_ok=True)
    LOGDIR.mkdir(parents=True, exist_ok=True)

    datestring = date.today().isoformat()

    for i in count():
        logpath = LOGDIR / f"{log_prefix}{datestring}.{i}.log"
        if not logpath.exists():
            break

    logging.basicConfig(
        filename=logpath,
        level=loglevel,
        format="%(asctime)s;%(levelname)-8s;%(name)-30s;%(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # Capture Python warnings to the logfile with logger py.warnings
    logging.captureWarnings(True)

    # Log system+version info
    current_datestring = datetime.now().isoformat(timespec="seconds")
    logger.setLevel(logging.DEBUG)
    logger.debug(f"Starting amd {VERSION_STRING} at {current_datestring}")
    logger.debug(f"Running on {platform.uname()}. Python {platform.python_version()}")
    logger.setLevel(loglevel)


def main() -> None:  # pragma: nocover
    options = get_options()

    setup(options.loglevel)

    sys.exit(run_command(options))


if __name__ == "__main__":  # pragma: nocover
    main()
