"""
Example scenario family: a seven-agent, two-cluster benchmark and its
failure variants, materialized as scenario/gain/report/CSV bundles.

Benchmark topology (1-based nodes, clusters {1, 2, 3, 4} and {5, 6, 7}):

* G1 pins nodes 1, 2, 5, 6 (d = 2); intra edge 2 -> 3; inter edges into
  node 3 from 5 (+0.5) and 6 (-0.5), into node 5 from 1 (+0.5) and 2 (-0.5).
* G2 pins nodes 3, 4, 7 (d = 2); intra edges 4 -> 1 and 7 -> 6; inter edges
  into node 2 from 7 (+0.5) and 6 (-0.5), into node 6 from 4 (+0.5) and 3 (-0.5).

Neither phase graph reaches every node of its cluster from the leader; the
dwell-weighted average pins every node with d = 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .analysis import ConditionReport, audit_scenario
from .core import ClusterSyncError, DivergenceError, ValidationError, ensure_dir
from .export import write_gain_file, write_text, write_trajectory_csv
from .gain_synthesis import GainSet, PlantModel, synthesize_gain
from .graph_core import ClusterPartition, Phase, SwitchingSignal, WeightedDigraph
from .logging import OperationLogger
from .scenario import ClusterScenario, dump_scenario
from .simulator import SimConfig, Trajectory, simulate

EXIT_DIVERGED = 20

CLUSTERS = ((0, 1, 2, 3), (4, 5, 6))
N_NODES = 7
DWELL = 1.0
BENCHMARK_WEIGHT = np.diag([100.0, 1.0, 1.0, 1.0])
LEADERS = np.array([[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]])


def example_plant() -> PlantModel:
    """Linearized cart-pendulum style plant; controllable."""
    A = [[0, 1, 0, 0], [0, 0, -1, 0], [0, 0, 0, 1], [0, 0, 5, 0]]
    B = [[0], [1], [0], [-2]]
    return PlantModel(A, B, name="example")


def _modified_A() -> List[List[float]]:
    return [[0, 1, 0, 0], [0, 0, -1, 0], [0, 0, 0, 1], [0, 0, 0, 5]]


def uncontrollable_plant() -> PlantModel:
    """Modified plant whose eigenvalues 5 and 0 cannot be reached from B."""
    return PlantModel(_modified_A(), [[0], [-1], [0], [0]], name="uncontrollable")


def printed_uncontrollable_plant() -> PlantModel:
    """Modified A with the nominal input column; this pair is in fact controllable."""
    return PlantModel(_modified_A(), [[0], [1], [0], [-2]], name="printed")


# (receiver, sender) -> weight, 1-based
_G1_EDGES = {(3, 2): 0.5, (3, 5): 0.5, (3, 6): -0.5, (5, 1): 0.5, (5, 2): -0.5}
_G1_PINS = {1: 2.0, 2: 2.0, 5: 2.0, 6: 2.0}
_G2_EDGES = {
    (1, 4): 0.5,
    (6, 7): 0.5,
    (2, 7): 0.5,
    (2, 6): -0.5,
    (6, 4): 0.5,
    (6, 3): -0.5,
}
_G2_PINS = {3: 2.0, 4: 2.0, 7: 2.0}

# isolating node 4 drops its G2 pin, the intra edge 4 -> 1 and the
# balanced inter pair into node 6 from 4 and 3
_NO_TREE_G2_EDGES = {(6, 7): 0.5, (2, 7): 0.5, (2, 6): -0.5}
_NO_TREE_G2_PINS = {3: 2.0, 7: 2.0}


def _adjacency(edges: Dict[Tuple[int, int], float]) -> np.ndarray:
    adj = np.zeros((N_NODES, N_NODES))
    for (i, j), w in edges.items():
        adj[i - 1, j - 1] = w
    return adj


def _pinning(pins: Dict[int, float]) -> np.ndarray:
    d = np.zeros(N_NODES)
    for i, value in pins.items():
        d[i - 1] = value
    return d


def _two_phase_scenario(
    name: str,
    description: str,
    g2_edges: Dict[Tuple[int, int], float],
    g2_pins: Dict[int, float],
    epsilon: float,
    coupling: Tuple[float, float],
    horizon: float,
) -> ClusterScenario:
    partition = ClusterPartition(CLUSTERS, N_NODES)
    graphs = {
        "G1": WeightedDigraph(_adjacency(_G1_EDGES), name="G1", partition=partition),
        "G2": WeightedDigraph(_adjacency(g2_edges), name="G2", partition=partition),
    }
    pinnings = {"G1": _pinning(_G1_PINS), "G2": _pinning(g2_pins)}
    signal = SwitchingSignal(
        (
            Phase("G1", pinnings["G1"], DWELL),
            Phase("G2", pinnings["G2"], DWELL),
        ),
        cyclic=True,
        epsilon=epsilon,
    )
    return ClusterScenario(
        name=name,
        description=description,
        plant=example_plant(),
        partition=partition,
        graphs=graphs,
        pinnings=pinnings,
        signal=signal,
        coupling=np.array(coupling, dtype=float),
        leaders=LEADERS,
        sim=SimConfig(
            dt=0.0025,
            horizon=horizon,
            seed=0,
            init_range=((-10.0, 10.0),),
            record_stride=20,
        ),
        gain_weight=BENCHMARK_WEIGHT,
    )


def benchmark_scenario(
    epsilon: float = 0.01, coupling: Tuple[float, float] = (2.0, 2.0)
) -> ClusterScenario:
    """Two-cluster benchmark whose phases only connect on average."""
    return _two_phase_scenario(
        "benchmark",
        "Seven agents, two clusters, two alternating pinned graphs",
        _G2_EDGES,
        _G2_PINS,
        epsilon,
        coupling,
        horizon=10.0,
    )


def no_tree_scenario(epsilon: float = 0.01) -> ClusterScenario:
    """Benchmark with node 4 cut off in every phase (no average spanning tree)."""
    return _two_phase_scenario(
        "no-average-tree",
        "Node 4 receives nothing from its cluster or leader in any phase",
        _NO_TREE_G2_EDGES,
        _NO_TREE_G2_PINS,
        epsilon,
        (2.0, 2.0),
        horizon=8.0,
    )


def _renamed(scenario: ClusterScenario, name: str, description: str) -> ClusterScenario:
    return replace(scenario, name=name, description=description)


def _fig6() -> ClusterScenario:
    base = benchmark_scenario(epsilon=0.01)
    scenario = base.with_plant(uncontrollable_plant(), design_plant=example_plant())
    scenario = scenario.with_sim(horizon=2.0)
    return _renamed(
        scenario,
        "fig6",
        "Uncontrollable plant driven by the gain designed on the nominal plant",
    )


EXAMPLES: Dict[str, Callable[[], ClusterScenario]] = {
    "fig2": lambda: _renamed(
        benchmark_scenario(0.01), "fig2", "Fast switching (epsilon = 0.01): synchronizes"
    ),
    "fig3": lambda: _renamed(
        benchmark_scenario(0.05), "fig3", "Slower switching (epsilon = 0.05)"
    ),
    "fig4": lambda: _renamed(
        benchmark_scenario(1.0), "fig4", "No time-scale separation (epsilon = 1)"
    ),
    "fig5a": lambda: _renamed(
        no_tree_scenario(0.01), "fig5a", "Average graph without spanning tree"
    ),
    "fig5b": lambda: _renamed(
        benchmark_scenario(0.8), "fig5b", "Benchmark topology at epsilon = 0.8"
    ),
    "fig6": _fig6,
}

ALIASES: Dict[str, Tuple[str, ...]] = {"fig5": ("fig5a", "fig5b")}


def example_names() -> List[str]:
    return sorted(set(EXAMPLES) | set(ALIASES))


def expand_name(name: str) -> Tuple[str, ...]:
    if name in ALIASES:
        return ALIASES[name]
    if name in EXAMPLES:
        return (name,)
    raise ValidationError(
        f"unknown example '{name}' (choose from {', '.join(example_names())})",
        field="name",
    )


def build_example(name: str) -> ClusterScenario:
    """Scenario behind a single example name (aliases are not accepted)."""
    if name not in EXAMPLES:
        raise ValidationError(f"unknown example '{name}'", field="name")
    return EXAMPLES[name]()


@dataclass
class ExampleResult:
    name: str
    exit_code: int
    report: Optional[ConditionReport] = None
    gains: Optional[GainSet] = None
    trajectory: Optional[Trajectory] = None
    paths: Dict[str, Path] = field(default_factory=dict)
    error: Optional[str] = None


def run_example(
    name: str, out_dir: Path, logger: Optional[OperationLogger] = None
) -> ExampleResult:
    """
    Materialize and run one example end to end.

    Writes ``scenario.yaml``, ``gains.yaml``, ``report.txt`` and
    ``trajectory.csv`` into ``out_dir``. The audit includes the empirical
    epsilon check, so a structurally certified example whose error does not
    decay at its epsilon exits 14. A diverging simulation yields 20.
    """
    scenario = build_example(name)
    ensure_dir(out_dir)
    result = ExampleResult(name=name, exit_code=0)
    result.paths["scenario"] = dump_scenario(scenario, out_dir / "scenario.yaml")

    gains = synthesize_gain(scenario.controller_plant, scenario.gain_weight)
    result.gains = gains
    result.paths["gains"] = write_gain_file(gains, out_dir / "gains.yaml")

    report = audit_scenario(scenario, gains, with_epsilon_guidance=True)
    result.report = report
    result.exit_code = report.exit_code
    result.paths["report"] = write_text(report.to_text(), out_dir / "report.txt")
    if logger:
        logger.log_info(f"{name}: verdict {report.verdict.value} (exit {report.exit_code})")

    try:
        traj = simulate(scenario, gains)
    except DivergenceError as e:
        result.error = str(e)
        result.exit_code = result.exit_code or EXIT_DIVERGED
        if logger:
            logger.log_error(e, f"simulating {name}")
        return result
    except ClusterSyncError as e:
        result.error = str(e)
        raise

    result.trajectory = traj
    result.paths["trajectory"] = write_trajectory_csv(traj, out_dir / "trajectory.csv")
    if logger:
        logger.log_info(
            f"{name}: E(T)/E(0) = {traj.total_final_ratio:.3g} over {traj.times[-1]:g} s"
        )
    return result
