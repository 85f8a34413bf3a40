"""
Shared fixtures for the walsh-snapping test suite.
"""

import os
import sys

import pytest

# Add the src directory to the path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from walsh_snapping.domain import AngularMeasure  # noqa: E402
from walsh_snapping.grid import Grid  # noqa: E402


@pytest.fixture
def uniform4():
    return AngularMeasure.uniform(4)


@pytest.fixture
def skewed3():
    return AngularMeasure.from_weights([0.5, 0.3, 0.2])


@pytest.fixture
def small_grid():
    return Grid.covering(4, 1.0, 0.01)


@pytest.fixture(autouse=True)
def clean_walsh_env(monkeypatch):
    """Keep WALSH_* variables from the developer shell out of the tests."""
    for name in ("WALSH_OUTPUT_DIR", "WALSH_LOG_LEVEL", "WALSH_SEED", "WALSH_RESULTS_ROOT"):
        monkeypatch.delenv(name, raising=False)
