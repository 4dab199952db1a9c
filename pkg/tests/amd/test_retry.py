from unittest.mock import patch

import pytest

from amd.retry import ExecutionError, Executor, execute_with_retry, exponential_backoff


def make_fallible(failures: int) -> Executor[int]:
    failure_count = [0]

    def f(*, last_try: bool) -> int:
        if failure_count[0] < failures:
            failure_count[0] += 1
            raise ExecutionError

        return 1

    return f


@pytest.mark.parametrize("failures", range(5))
@patch("amd.retry.time.sleep")
def test_execute_with_retry(sleep: object, failures: int) -> None:
    f = make_fallible(failures)
    assert execute_with_retry(f, backoff=(0.0,) * 4) == 1


@pytest.mark.parametrize("failures", range(5, 10))
@patch("amd.retry.time.sleep")
def test_execute_with_retry_failure(sleep: object, failures: int) -> None:
    f = make_fallible(failures)
    with pytest.raises(ExecutionError):
        execute_with_retry(f, backoff=(0.0,) * 4)


@pytest.mark.parametrize("retries", range(0, 9))
@patch("amd.retry.time.sleep")
def test_execute_with_retry_last_try(sleep: object, retries: int) -> None:
    """Assert that last_try is properly provided to the executor"""
    call_count = [0]

    def f(*, last_try: bool) -> int:
        call_count[0] += 1
        if last_try:
            assert call_count[0] == retries + 1
            return 1
        else:
            assert call_count[0] <= retries
            raise ExecutionError

    assert execute_with_retry(f, backoff=(0.0,) * retries) == 1


def test_execute_with_retry_sleeps_by_schedule() -> None:
    with patch("amd.retry.time.sleep") as sleep:
        with pytest.raises(ExecutionError):
            execute_with_retry(make_fallible(10), backoff=(1.0, 2.0, 4.0))

    # No sleep after the final attempt
    assert [call.args[0] for call in sleep.call_args_list] == [1.0, 2.0, 4.0]


@pytest.mark.parametrize(
    "retries, base, schedule",
    (
        (0, 1.0, ()),
        (1, 1.0, (1.0,)),
        (3, 1.0, (1.0, 2.0, 4.0)),
        (4, 0.5, (0.5, 1.0, 2.0, 4.0)),
    ),
)
def test_exponential_backoff(
    retries: int, base: float, schedule: tuple[float, ...]
) -> None:
    assert exponential_backoff(retries, base) == schedule


def test_exponential_backoff_negative() -> None:
    with pytest.raises(ValueError):
        exponential_backoff(-1)
