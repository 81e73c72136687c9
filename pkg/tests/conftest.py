"""Shared test fixtures and configuration."""

import tempfile
from pathlib import Path
from typing import Any, Dict, Generator

import numpy as np
import pytest
import yaml

from cluster_sync.gain_synthesis import GainSet, PlantModel, synthesize_gain
from cluster_sync.graph_core import (
    ClusterPartition,
    Phase,
    SwitchingSignal,
    WeightedDigraph,
)
from cluster_sync.repro import (
    BENCHMARK_WEIGHT,
    benchmark_scenario,
    example_plant,
    no_tree_scenario,
)
from cluster_sync.scenario import ClusterScenario
from cluster_sync.simulator import SimConfig, Trajectory, simulate


@pytest.fixture
def tmp_path() -> Generator[Path, None, None]:
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmp_dir:
        yield Path(tmp_dir)


@pytest.fixture
def project_root() -> Path:
    """Get the project root directory."""
    return Path(__file__).resolve().parents[1]


@pytest.fixture
def samples_dir(project_root: Path) -> Path:
    """Directory holding the shipped scenario files."""
    return project_root / "samples"


@pytest.fixture(scope="session")
def benchmark() -> ClusterScenario:
    """Seven-agent, two-cluster benchmark at epsilon = 0.01."""
    return benchmark_scenario(epsilon=0.01)


@pytest.fixture(scope="session")
def no_tree() -> ClusterScenario:
    """Benchmark variant whose average graph misses node 4."""
    return no_tree_scenario(epsilon=0.01)


@pytest.fixture(scope="session")
def benchmark_gains() -> GainSet:
    """Gain set designed on the nominal plant with the benchmark weight."""
    return synthesize_gain(example_plant(), BENCHMARK_WEIGHT)


@pytest.fixture(scope="session")
def benchmark_trajectory(
    benchmark: ClusterScenario, benchmark_gains: GainSet
) -> Trajectory:
    """Full 10 s benchmark run with the scenario's own settings."""
    return simulate(benchmark, benchmark_gains)


@pytest.fixture
def scalar_plant() -> PlantModel:
    """x' = u."""
    return PlantModel([[0.0]], [[1.0]], name="scalar")


@pytest.fixture
def two_node_scenario(scalar_plant: PlantModel) -> ClusterScenario:
    """Scalar agents 1 <- 2 with node 2 pinned, one cluster, one phase."""
    partition = ClusterPartition.single(2)
    graph = WeightedDigraph(np.array([[0.0, 1.0], [0.0, 0.0]]), name="G", partition=partition)
    pinning = np.array([0.0, 1.0])
    signal = SwitchingSignal((Phase("G", pinning, 1.0),), cyclic=True, epsilon=1.0)
    return ClusterScenario(
        name="line",
        plant=scalar_plant,
        partition=partition,
        graphs={"G": graph},
        signal=signal,
        coupling=np.array([1.0]),
        leaders=np.array([[0.5]]),
        sim=SimConfig(dt=0.01, horizon=1.0, init_range=((-1.0, 1.0),), record_stride=10),
    )


SCALAR_SCENARIO_YAML = """\
name: scalar
plant:
  A: [[0]]
  B: [[1]]
partition: [[1]]
graphs:
  G:
    adjacency: [[0]]
    pinning: [1]
switching:
  phases: [{graph: G, dwell: 1.0}]
  cyclic: true
  epsilon: 1.0
coupling:
  clusters: [1.0]
leaders: [[0.0]]
sim: {dt: 0.01, horizon: 1.0, seed: 0, init_range: [-1, 1], record_stride: 10}
"""


@pytest.fixture
def scalar_scenario_file(tmp_path: Path) -> Path:
    """Single scalar agent pinned to a constant leader."""
    path = tmp_path / "scalar.yaml"
    path.write_text(SCALAR_SCENARIO_YAML, encoding="utf-8")
    return path


@pytest.fixture
def scalar_scenario_data() -> Dict[str, Any]:
    """Parsed form of the scalar scenario, safe to mutate."""
    return yaml.safe_load(SCALAR_SCENARIO_YAML)
