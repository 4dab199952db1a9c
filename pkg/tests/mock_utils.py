from dataclasses import dataclass


class MockedTime:
    """Class mocking the clock and sleep used by the evolution loop"""

    def __init__(self, start: float = 0.0) -> None:
        self.current_time = start
        self.sleeps: list[float] = []

        self.time = _MockedTimeModule(self)


@dataclass
class _MockedTimeModule:
    """Class mocking the time module"""

    parent: MockedTime

    def sleep(self, seconds: float) -> None:
        """Mock time.sleep"""
        assert seconds >= 0

        self.parent.sleeps.append(seconds)
        self.parent.current_time += seconds

    def monotonic(self) -> float:
        """Mock time.monotonic"""
        return self.parent.current_time
