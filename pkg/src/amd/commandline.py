import logging
from argparse import ArgumentParser, RawDescriptionHelpFormatter
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum, unique
from pathlib import Path

from amd.config import describe_defaults


@unique
class Command(str, Enum):
    RUN = "run"
    EVAL = "eval"
    VERIFY = "verify"
    BENCH = "bench"
    DISTILL = "distill"


BENCH_TABLES = ("table1", "table2")


@dataclass
class Options:
    command: Command
    config_path: Path | None
    seed: int | None
    workers: int | None
    out: Path | None
    heuristic_path: Path | None
    table: str | None
    goal_path: Path | None
    per_sample_path: Path | None
    step: float
    resume: bool
    loglevel: int


def resolve_path(p: str) -> Path:  # pragma: no cover
    """Construct the path from p and resolve it to lock the effects of cwd"""
    return Path(p).resolve()


def positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise ValueError(f"Expected a positive integer, got {number}")
    return number


def loglevel_from_verbosity(verbose: int) -> int:
    if verbose <= 0:
        # Default loglevel to INFO
        return logging.INFO
    elif verbose == 1:
        return logging.CRITICAL
    elif verbose == 2:
        return logging.ERROR
    elif verbose == 3:
        return logging.WARNING
    elif verbose == 4:
        return logging.INFO
    return logging.DEBUG


def get_options(args: Sequence[str] | None = None) -> Options:
    # We pass args manually in testing -> don't exit on error
    exit_on_error = args is None

    common = ArgumentParser(add_help=False)
    common.add_argument(
        "-c",
        "--config",
        help="Path to the .json or .toml run config",
        type=resolve_path,
        default=None,
    )
    common.add_argument(
        "--seed",
        help="Top level seed, overrides the config. Drawn and printed if absent",
        type=int,
        default=None,
    )
    common.add_argument(
        "-w",
        "--workers",
        help="Evaluation worker threads, overrides the config. 1 is reproducible",
        type=positive_int,
        default=None,
    )
    common.add_argument(
        "-o",
        "--out",
        help="Directory to write artifacts to, overrides the config",
        type=resolve_path,
        default=None,
    )
    common.add_argument(
        "-v",
        "--verbose",
        help="Verbosity of the logs (0-5). 0 means info, 1-5 means critical-debug",
        action="count",
        default=0,
    )

    parser = ArgumentParser(
        prog="amd",
        description="Evolve auction mechanism heuristics",
        epilog="config keys and their defaults:\n" + describe_defaults(),
        formatter_class=RawDescriptionHelpFormatter,
        exit_on_error=exit_on_error,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser(
        Command.RUN.value,
        parents=[common],
        help="Run the evolution loop",
        exit_on_error=exit_on_error,
    )
    run_parser.add_argument(
        "--resume",
        help="Continue the run checkpointed in the output directory",
        action="store_true",
    )

    eval_parser = subparsers.add_parser(
        Command.EVAL.value,
        parents=[common],
        help="Score one heuristic file on fresh test samples",
        exit_on_error=exit_on_error,
    )
    eval_parser.add_argument("heuristic", type=resolve_path)
    eval_parser.add_argument(
        "--per-sample",
        help="Write each sample's contribution to this csv file",
        type=resolve_path,
        default=None,
    )

    verify_parser = subparsers.add_parser(
        Command.VERIFY.value,
        parents=[common],
        help="Check strategy-proofness and budget balance on a value grid",
        exit_on_error=exit_on_error,
    )
    verify_parser.add_argument("heuristic", type=resolve_path)
    verify_parser.add_argument(
        "--step",
        help="Spacing of the value grid",
        type=float,
        default=0.1,
    )

    bench_parser = subparsers.add_parser(
        Command.BENCH.value,
        parents=[common],
        help="Score the reference mechanisms against published numbers",
        exit_on_error=exit_on_error,
    )
    bench_parser.add_argument(
        "table", choices=BENCH_TABLES, nargs="?", default=None
    )

    distill_parser = subparsers.add_parser(
        Command.DISTILL.value,
        parents=[common],
        help="Evolve heuristics that match a tabulated goal function",
        exit_on_error=exit_on_error,
    )
    distill_parser.add_argument(
        "--goal",
        help="Path to the goal function json, defaults to the shipped table",
        type=resolve_path,
        default=None,
    )
    distill_parser.add_argument(
        "--resume",
        help="Continue the run checkpointed in the output directory",
        action="store_true",
    )

    # Parse the args
    # Parses from sys.argv if args is None
    parsed = parser.parse_args(args=args)

    assert parsed.config is None or isinstance(parsed.config, Path)
    assert parsed.out is None or isinstance(parsed.out, Path)
    assert isinstance(parsed.verbose, int)

    return Options(
        command=Command(parsed.command),
        config_path=parsed.config,
        seed=parsed.seed,
        workers=parsed.workers,
        out=parsed.out,
        heuristic_path=getattr(parsed, "heuristic", None),
        table=getattr(parsed, "table", None),
        goal_path=getattr(parsed, "goal", None),
        per_sample_path=getattr(parsed, "per_sample", None),
        step=getattr(parsed, "step", 0.1),
        resume=getattr(parsed, "resume", False),
        loglevel=loglevel_from_verbosity(parsed.verbose),
    )
