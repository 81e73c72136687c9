"""
Scenario files: everything that defines one closed-loop experiment.

Files are YAML with row-major matrices and 1-based node indices::

    name: benchmark
    plant: {A: [[...]], B: [[...]]}
    partition: [[1, 2, 3, 4], [5, 6, 7]]
    graphs:
      G1: {adjacency: [[...]], pinning: [...]}
    switching: {phases: [{graph: G1, dwell: 1.0}], cyclic: true, epsilon: 0.01}
    trust: {default: 1.0, edges: [{edge: [3, 2], initial: 1.0, changes: [[5.0, 0.5]]}]}
    coupling: {clusters: [2.0, 2.0], edges: [{edge: [3, 2], gain: 3.0}]}
    gain: {weight: [[...]], design_plant: {A: ..., B: ...}}
    leaders: [[1, 0, 0, 0], [-1, 0, 0, 0]]
    sim: {dt: 0.0025, horizon: 10.0, seed: 0, init_range: [-10, 10], record_stride: 20}
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np
import yaml

from .core import ValidationError, as_matrix, as_vector, frozen
from .gain_synthesis import PlantModel
from .graph_core import (
    AverageResult,
    BlockLaplacian,
    ClusterPartition,
    Edge,
    EdgeTrust,
    Phase,
    SwitchingSignal,
    TrustSchedule,
    WeightedDigraph,
    average_laplacian,
    laplacian_of,
)
from .simulator import SimConfig


@dataclass(frozen=True, eq=False)
class ClusterScenario:
    """A fully validated experiment: plant, network, schedule and run settings."""

    name: str
    plant: PlantModel
    partition: ClusterPartition
    graphs: Dict[str, WeightedDigraph]
    signal: SwitchingSignal
    coupling: np.ndarray
    leaders: np.ndarray
    trust: TrustSchedule = field(default_factory=TrustSchedule)
    edge_gains: Dict[Edge, float] = field(default_factory=dict)
    sim: SimConfig = field(default_factory=SimConfig)
    gain_weight: Optional[np.ndarray] = None
    design_plant: Optional[PlantModel] = None
    description: str = ""
    pinnings: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        N = self.partition.n_nodes
        n = self.plant.n
        object.__setattr__(self, "graphs", dict(self.graphs))
        object.__setattr__(self, "edge_gains", dict(self.edge_gains))

        for name, graph in self.graphs.items():
            if graph.n_nodes != N:
                raise ValidationError(
                    f"graph has {graph.n_nodes} nodes, partition has {N}",
                    field=f"graphs.{name}.adjacency",
                )
        for k, phase in enumerate(self.signal.phases):
            if phase.graph not in self.graphs:
                raise ValidationError(
                    f"unknown graph '{phase.graph}'", field=f"switching.phases[{k}].graph"
                )
            if phase.pinning.shape != (N,):
                raise ValidationError(
                    f"pinning has {phase.pinning.shape[0]} entries, expected {N}",
                    field=f"graphs.{phase.graph}.pinning",
                )

        pinnings = {name: frozen(np.array(d, dtype=float)) for name, d in self.pinnings.items()}
        for phase in self.signal.phases:
            pinnings.setdefault(phase.graph, phase.pinning)
        for name in self.graphs:
            pinnings.setdefault(name, frozen(np.zeros(N)))
        object.__setattr__(self, "pinnings", pinnings)

        c = as_vector(self.coupling, "coupling.clusters", self.partition.p)
        if np.any(c <= 0):
            raise ValidationError("cluster gains must be positive", field="coupling.clusters")
        object.__setattr__(self, "coupling", frozen(c))

        leaders = as_matrix(self.leaders, "leaders", (self.partition.p, n))
        object.__setattr__(self, "leaders", frozen(leaders))

        if self.gain_weight is not None:
            W = as_matrix(self.gain_weight, "gain.weight", (n, n))
            object.__setattr__(self, "gain_weight", frozen(W))
        if self.design_plant is not None:
            if (self.design_plant.n, self.design_plant.m) != (n, self.plant.m):
                raise ValidationError(
                    "design plant dimensions differ from the plant", field="gain.design_plant"
                )

        # validates override edges against the partition
        laplacian_of(
            self.graphs[self.signal.phases[0].graph], None, 0.0, self.partition,
            self.signal.phases[0].pinning, c, self.edge_gains,
        )
        for i, j in self.trust.edges:
            if i >= N or j >= N:
                raise ValidationError(
                    f"trust edge ({i + 1}, {j + 1}) outside 1..{N}", field="trust.edges"
                )

    @property
    def n_nodes(self) -> int:
        return self.partition.n_nodes

    @property
    def n_states(self) -> int:
        return self.plant.n

    @property
    def controller_plant(self) -> PlantModel:
        """Model the feedback gain is designed on."""
        return self.design_plant or self.plant

    def laplacian_at(self, t: float) -> BlockLaplacian:
        """Block Laplacian active at slow time ``t``."""
        phase = self.signal.phases[self.signal.phase_index(t)]
        return laplacian_of(
            self.graphs[phase.graph], self.trust, t / self.signal.epsilon,
            self.partition, phase.pinning, self.coupling, self.edge_gains,
        )

    def phase_laplacian(self, k: int, tau: float = 0.0) -> BlockLaplacian:
        phase = self.signal.phases[k]
        return laplacian_of(
            self.graphs[phase.graph], self.trust, tau, self.partition,
            phase.pinning, self.coupling, self.edge_gains,
        )

    def average(
        self, horizon: Optional[float] = None, samples: int = 64, t0: float = 0.0
    ) -> AverageResult:
        return average_laplacian(
            self.signal,
            self.graphs,
            horizon if horizon is not None else self.sim.horizon,
            samples=samples,
            partition=self.partition,
            cluster_gains=self.coupling,
            trust=self.trust,
            t0=t0,
            edge_gains=self.edge_gains,
        )

    def with_epsilon(self, epsilon: float) -> "ClusterScenario":
        """Copy with a new time-scale ratio (clears any sim-level override)."""
        return replace(
            self,
            signal=self.signal.with_epsilon(epsilon),
            sim=replace(self.sim, epsilon=None),
        )

    def with_coupling(self, cluster_gains: Sequence[float]) -> "ClusterScenario":
        return replace(self, coupling=np.asarray(cluster_gains, dtype=float))

    def with_plant(
        self, plant: PlantModel, design_plant: Optional[PlantModel] = None
    ) -> "ClusterScenario":
        return replace(self, plant=plant, design_plant=design_plant)

    def with_sim(self, **changes: Any) -> "ClusterScenario":
        return replace(self, sim=self.sim.with_overrides(**changes))


def _require(data: Mapping[str, Any], key: str, path: str) -> Any:
    if not isinstance(data, Mapping):
        raise ValidationError("expected a mapping", field=path)
    if key not in data or data[key] is None:
        raise ValidationError("missing required field", field=f"{path}.{key}" if path else key)
    return data[key]


def _float(value: Any, path: str) -> float:
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"expected a number, got {value!r}", field=path)
    if not np.isfinite(out):
        raise ValidationError("must be finite", field=path)
    return out


def _check_rows(value: Any, path: str) -> None:
    """Name the first ragged row before numpy sees it."""
    if isinstance(value, list) and value and all(isinstance(r, list) for r in value):
        width = len(value[0])
        for r, row in enumerate(value):
            if len(row) != width:
                raise ValidationError(
                    f"row has {len(row)} entries, expected {width}", field=f"{path}[{r}]"
                )


def _matrix(value: Any, path: str, shape: Any = None) -> np.ndarray:
    _check_rows(value, path)
    return as_matrix(value, path, shape)


def _edge(value: Any, n_nodes: int, path: str) -> Edge:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ValidationError("edge must be a pair [i, j]", field=path)
    i, j = (int(v) for v in value)
    for node in (i, j):
        if not 1 <= node <= n_nodes:
            raise ValidationError(f"node {node} outside 1..{n_nodes}", field=path)
    return i - 1, j - 1


def _plant(data: Any, path: str) -> PlantModel:
    A = _matrix(_require(data, "A", path), f"{path}.A")
    B = _require(data, "B", path)
    _check_rows(B, f"{path}.B")
    return PlantModel(A, B, name=path)


def scenario_from_dict(data: Mapping[str, Any]) -> ClusterScenario:
    """
    Build a scenario from parsed file contents.

    Raises:
        ValidationError: With the dotted path of the first offending field
    """
    if not isinstance(data, Mapping):
        raise ValidationError("scenario file must contain a mapping")

    plant = _plant(_require(data, "plant", ""), "plant")
    clusters = _require(data, "partition", "")
    if not isinstance(clusters, list) or not all(isinstance(c, list) for c in clusters):
        raise ValidationError("expected a list of node lists", field="partition")
    partition = ClusterPartition.from_one_based(clusters)
    N = partition.n_nodes

    graphs: Dict[str, WeightedDigraph] = {}
    pinnings: Dict[str, np.ndarray] = {}
    raw_graphs = _require(data, "graphs", "")
    if not isinstance(raw_graphs, Mapping) or not raw_graphs:
        raise ValidationError("at least one graph is required", field="graphs")
    for name, spec in raw_graphs.items():
        path = f"graphs.{name}"
        adj = _matrix(_require(spec, "adjacency", path), f"{path}.adjacency", (N, N))
        graphs[str(name)] = WeightedDigraph(
            adj,
            name=str(name),
            partition=partition,
            allow_negative_intra=bool(spec.get("allow_negative_intra", False)),
        )
        pin = spec.get("pinning")
        pinnings[str(name)] = as_vector(
            pin if pin is not None else np.zeros(N), f"{path}.pinning", N
        )

    switching = _require(data, "switching", "")
    raw_phases = _require(switching, "phases", "switching")
    if not isinstance(raw_phases, list) or not raw_phases:
        raise ValidationError("at least one phase is required", field="switching.phases")
    phases = []
    for k, entry in enumerate(raw_phases):
        path = f"switching.phases[{k}]"
        graph_name = str(_require(entry, "graph", path))
        if graph_name not in graphs:
            raise ValidationError(f"unknown graph '{graph_name}'", field=f"{path}.graph")
        pinning = entry.get("pinning")
        phases.append(
            Phase(
                graph=graph_name,
                pinning=(
                    as_vector(pinning, f"{path}.pinning", N)
                    if pinning is not None
                    else pinnings[graph_name]
                ),
                dwell=_float(_require(entry, "dwell", path), f"{path}.dwell"),
            )
        )
    signal = SwitchingSignal(
        tuple(phases),
        cyclic=bool(switching.get("cyclic", True)),
        epsilon=_float(switching.get("epsilon", 1.0), "switching.epsilon"),
    )

    trust_data = data.get("trust") or {}
    trust_edges: Dict[Edge, EdgeTrust] = {}
    for k, entry in enumerate(trust_data.get("edges") or []):
        path = f"trust.edges[{k}]"
        edge = _edge(_require(entry, "edge", path), N, f"{path}.edge")
        changes = [
            (_float(t, f"{path}.changes[{c}]"), _float(v, f"{path}.changes[{c}]"))
            for c, (t, v) in enumerate(entry.get("changes") or [])
        ]
        try:
            trust_edges[edge] = EdgeTrust(
                initial=_float(entry.get("initial", 1.0), f"{path}.initial"),
                changes=tuple(changes),
            )
        except ValidationError as e:
            raise ValidationError(str(e), field=path)
    trust = TrustSchedule(
        trust_edges, default=_float(trust_data.get("default", 1.0), "trust.default")
    )

    coupling_data = _require(data, "coupling", "")
    coupling = as_vector(
        _require(coupling_data, "clusters", "coupling"), "coupling.clusters", partition.p
    )
    edge_gains: Dict[Edge, float] = {}
    for k, entry in enumerate(coupling_data.get("edges") or []):
        path = f"coupling.edges[{k}]"
        edge = _edge(_require(entry, "edge", path), N, f"{path}.edge")
        edge_gains[edge] = _float(_require(entry, "gain", path), f"{path}.gain")

    gain_data = data.get("gain") or {}
    weight = gain_data.get("weight")
    design = gain_data.get("design_plant")

    sim_data = dict(data.get("sim") or {})
    sim_kwargs: Dict[str, Any] = {}
    for key in ("dt", "horizon", "epsilon", "divergence_limit"):
        if sim_data.get(key) is not None:
            sim_kwargs[key] = _float(sim_data[key], f"sim.{key}")
    if sim_data.get("seed") is not None:
        sim_kwargs["seed"] = int(sim_data["seed"])
    if sim_data.get("record_stride") is not None:
        sim_kwargs["record_stride"] = int(sim_data["record_stride"])
    if sim_data.get("init_range") is not None:
        sim_kwargs["init_range"] = sim_data["init_range"]
    unknown = set(sim_data) - {
        "dt", "horizon", "epsilon", "divergence_limit", "seed", "record_stride", "init_range"
    }
    if unknown:
        raise ValidationError(f"unknown key(s) {sorted(unknown)}", field="sim")

    return ClusterScenario(
        name=str(data.get("name", "scenario")),
        description=str(data.get("description", "")),
        plant=plant,
        partition=partition,
        graphs=graphs,
        pinnings=pinnings,
        signal=signal,
        trust=trust,
        coupling=coupling,
        edge_gains=edge_gains,
        leaders=_matrix(_require(data, "leaders", ""), "leaders", (partition.p, plant.n)),
        sim=SimConfig(**sim_kwargs),
        gain_weight=(
            _matrix(weight, "gain.weight", (plant.n, plant.n)) if weight is not None else None
        ),
        design_plant=_plant(design, "gain.design_plant") if design is not None else None,
    )


def _rows(matrix: np.ndarray) -> List[List[float]]:
    return [[float(x) for x in row] for row in np.asarray(matrix)]


def _vec(vector: np.ndarray) -> List[float]:
    return [float(x) for x in np.asarray(vector)]


def scenario_to_dict(scenario: ClusterScenario) -> Dict[str, Any]:
    """Plain-Python form of ``scenario`` as written to scenario files."""
    phases = []
    for phase in scenario.signal.phases:
        entry: Dict[str, Any] = {"graph": phase.graph, "dwell": float(phase.dwell)}
        if not np.array_equal(phase.pinning, scenario.pinnings[phase.graph]):
            entry["pinning"] = _vec(phase.pinning)
        phases.append(entry)

    data: Dict[str, Any] = {
        "name": scenario.name,
        "description": scenario.description,
        "plant": {"A": _rows(scenario.plant.A), "B": _rows(scenario.plant.B)},
        "partition": scenario.partition.to_one_based(),
        "graphs": {
            name: {
                "adjacency": _rows(graph.adjacency),
                "pinning": _vec(scenario.pinnings[name]),
                **({"allow_negative_intra": True} if graph.allow_negative_intra else {}),
            }
            for name, graph in scenario.graphs.items()
        },
        "switching": {
            "phases": phases,
            "cyclic": bool(scenario.signal.cyclic),
            "epsilon": float(scenario.signal.epsilon),
        },
        "trust": {
            "default": float(scenario.trust.default),
            "edges": [
                {
                    "edge": [i + 1, j + 1],
                    "initial": float(trust.initial),
                    "changes": [[float(t), float(v)] for t, v in trust.changes],
                }
                for (i, j), trust in sorted(scenario.trust.edges.items())
            ],
        },
        "coupling": {
            "clusters": _vec(scenario.coupling),
            "edges": [
                {"edge": [i + 1, j + 1], "gain": float(g)}
                for (i, j), g in sorted(scenario.edge_gains.items())
            ],
        },
        "leaders": _rows(scenario.leaders),
    }

    gain: Dict[str, Any] = {}
    if scenario.gain_weight is not None:
        gain["weight"] = _rows(scenario.gain_weight)
    if scenario.design_plant is not None:
        gain["design_plant"] = {
            "A": _rows(scenario.design_plant.A),
            "B": _rows(scenario.design_plant.B),
        }
    if gain:
        data["gain"] = gain

    sim = scenario.sim
    data["sim"] = {
        "dt": float(sim.dt),
        "horizon": float(sim.horizon),
        "seed": int(sim.seed),
        "init_range": [[lo, hi] for lo, hi in sim.init_range],
        "record_stride": int(sim.record_stride),
        "divergence_limit": float(sim.divergence_limit),
    }
    if sim.epsilon is not None:
        data["sim"]["epsilon"] = float(sim.epsilon)
    return data


def load_scenario(path: Path) -> ClusterScenario:
    """
    Read and validate a scenario file.

    Raises:
        ValidationError: If the file is unreadable, not YAML or fails validation
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ValidationError(f"cannot read scenario file {path}: {e}")
    except yaml.YAMLError as e:
        raise ValidationError(f"cannot parse scenario file {path}: {e}")
    return scenario_from_dict(data)


def dump_scenario(scenario: ClusterScenario, path: Path) -> Path:
    """Write ``scenario`` as YAML; returns the path written."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(
            scenario_to_dict(scenario), f, sort_keys=False, default_flow_style=None
        )
    return path
