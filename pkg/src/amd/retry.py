import logging
import time
from collections.abc import Sequence
from typing import Protocol, TypeVar

logger = logging.getLogger(__name__)


class ExecutionError(Exception):
    pass


T = TypeVar("T", covariant=True)


class Executor(Protocol[T]):  # pragma: no coverage
    """Protocol for functions passed to execute_with_retry"""

    def __call__(self, *, last_try: bool) -> T:
        raise NotImplementedError


def execute_with_retry(f: Executor[T], backoff: Sequence[float]) -> T:
    """
    Retry the function until it doesn't raise an ExecutionError

    The function is tried len(backoff) + 1 times, sleeping backoff[i] seconds
    after the i-th failure.
    """
    errors = []  # Store the errors
    attempts = len(backoff) + 1

    for i in range(attempts):
        try:
            value = f(last_try=i + 1 == attempts)
        except ExecutionError as e:
            logger.warning(f"Function execution failed ({i+1}/{attempts})", exc_info=e)
            errors.append(e)
        else:
            return value

        if i < len(backoff):
            time.sleep(backoff[i])  # Wait a bit before retrying

    raise ExecutionError(f"Multiple ({attempts}) executions failed: {errors}")


def exponential_backoff(retries: int, base: float = 1.0) -> tuple[float, ...]:
    """Return the schedule base, 2*base, 4*base, ... with `retries` entries"""
    if retries < 0:
        raise ValueError("Negative retry count not supported")
    return tuple(base * 2**i for i in range(retries))
