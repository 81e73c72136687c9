"""
Pytest configuration and fixtures for integration tests.

Provides the gain set and output workspace shared by the example workflows.
"""

from pathlib import Path
from typing import Generator

import pytest

from cluster_sync.gain_synthesis import GainSet, synthesize_gain
from cluster_sync.repro import BENCHMARK_WEIGHT, example_plant


@pytest.fixture
def workspace(tmp_path: Path) -> Generator[Path, None, None]:
    """Output root for example bundles."""
    root = tmp_path / "repro_out"
    root.mkdir()
    yield root


@pytest.fixture(scope="session")
def nominal_gains() -> GainSet:
    """Gain set every example designs on the nominal plant."""
    return synthesize_gain(example_plant(), BENCHMARK_WEIGHT)

