from pathlib import Path

import pytest


@pytest.fixture(scope="session")
def data_directory() -> Path:
    """Return a Path to the directory of golden files"""
    return Path(__file__).parent / "data"
