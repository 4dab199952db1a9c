import logging
import os
from functools import cache

logger = logging.getLogger(__name__)

MAX_WORKERS = 16


def get_cpu_count() -> int | None:
    """Return the amount of logical cores on the computer, None if failure"""
    try:
        return os.cpu_count()
    except OSError:  # pragma: no coverage
        logger.exception("Failed getting cpu count")
        return None


def recommend_worker_count_from_cpu_count(cpu_count: int | None) -> int:
    """Recommend cpu_count restricted to [1, MAX_WORKERS], 1 if failure"""
    if cpu_count is not None:
        return max(1, min(MAX_WORKERS, cpu_count))

    logger.warning("Failed getting cpu count, defaulting to 1 evaluation worker")
    return 1


@cache
def recommend_worker_count() -> int:
    """Recommend an amount of evaluation workers for the current cpu"""
    return recommend_worker_count_from_cpu_count(get_cpu_count())
