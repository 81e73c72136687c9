"""
Weighted digraphs with cluster partitions, trust schedules and switching signals.

Conventions used throughout the package:

* Nodes are 0-based in memory (scenario files use 1-based indices).
* ``adjacency[i, j]`` is the weight of edge ``j -> i`` (information flows
  from j to i).
* Switching dwell times and trust breakpoints live in fast time ``tau``;
  the slow (simulation) time is ``t = epsilon * tau``.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .core import ValidationError, as_matrix, as_vector, block_diag_mask, frozen

DEFAULT_BALANCE_TOL = 1e-9
DEFAULT_EDGE_TOL = 1e-6

Edge = Tuple[int, int]

_LEADER = "leader"


@dataclass(frozen=True)
class ClusterPartition:
    """Ordered, disjoint clusters covering nodes ``0..n_nodes-1``."""

    clusters: Tuple[Tuple[int, ...], ...]
    n_nodes: int

    def __post_init__(self) -> None:
        clusters = tuple(tuple(int(i) for i in members) for members in self.clusters)
        object.__setattr__(self, "clusters", clusters)
        n = int(self.n_nodes)
        object.__setattr__(self, "n_nodes", n)

        if not clusters:
            raise ValidationError("at least one cluster is required", field="partition")

        labels = np.full(n, -1, dtype=int)
        for ell, members in enumerate(clusters):
            if not members:
                raise ValidationError(
                    f"cluster {ell + 1} is empty", field=f"partition[{ell}]"
                )
            for i in members:
                if i < 0 or i >= n:
                    raise ValidationError(
                        f"node {i + 1} is outside 1..{n}", field=f"partition[{ell}]"
                    )
                if labels[i] >= 0:
                    raise ValidationError(
                        f"node {i + 1} belongs to more than one cluster",
                        field=f"partition[{ell}]",
                    )
                labels[i] = ell

        missing = np.flatnonzero(labels < 0)
        if missing.size:
            raise ValidationError(
                "nodes not assigned to any cluster: "
                + ", ".join(str(i + 1) for i in missing),
                field="partition",
            )
        object.__setattr__(self, "_labels", frozen(labels))

    @classmethod
    def from_one_based(
        cls, clusters: Sequence[Sequence[int]], n_nodes: Optional[int] = None
    ) -> "ClusterPartition":
        """Build a partition from 1-based node lists (scenario-file form)."""
        zero_based = tuple(tuple(int(i) - 1 for i in members) for members in clusters)
        if n_nodes is None:
            n_nodes = sum(len(members) for members in zero_based)
        return cls(zero_based, n_nodes)

    @classmethod
    def single(cls, n_nodes: int) -> "ClusterPartition":
        """One cluster holding every node."""
        return cls((tuple(range(n_nodes)),), n_nodes)

    def to_one_based(self) -> List[List[int]]:
        return [[i + 1 for i in members] for members in self.clusters]

    @property
    def p(self) -> int:
        return len(self.clusters)

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(members) for members in self.clusters)

    @property
    def labels(self) -> np.ndarray:
        """Cluster index of every node (the map i -> i-bar)."""
        return self._labels  # type: ignore[attr-defined, no-any-return]

    def cluster_of(self, i: int) -> int:
        return int(self.labels[i])

    def members(self, ell: int) -> np.ndarray:
        return np.asarray(self.clusters[ell], dtype=int)


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    """
    Immutable weighted digraph on N nodes.

    Intra-cluster weights must be non-negative when a partition is supplied,
    unless ``allow_negative_intra`` is set for adversarial experiments.
    """

    adjacency: np.ndarray
    name: str = ""
    partition: Optional[ClusterPartition] = None
    allow_negative_intra: bool = False

    def __post_init__(self) -> None:
        path = f"graphs.{self.name}.adjacency" if self.name else "adjacency"
        adj = as_matrix(self.adjacency, path)
        if adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"adjacency must be square, got {adj.shape}", field=path)
        if np.any(np.diag(adj) != 0.0):
            raise ValidationError("self-loops are not allowed (a_ii must be 0)", field=path)
        if self.partition is not None:
            if self.partition.n_nodes != adj.shape[0]:
                raise ValidationError(
                    f"partition covers {self.partition.n_nodes} nodes, "
                    f"adjacency has {adj.shape[0]}",
                    field=path,
                )
            if not self.allow_negative_intra:
                same = block_diag_mask(self.partition.labels)
                bad = np.argwhere(same & (adj < 0.0))
                if bad.size:
                    i, j = bad[0]
                    raise ValidationError(
                        f"negative intra-cluster weight a_{i + 1},{j + 1} = {adj[i, j]:g}",
                        field=path,
                    )
        object.__setattr__(self, "adjacency", frozen(adj))

    @property
    def n_nodes(self) -> int:
        return int(self.adjacency.shape[0])

    @classmethod
    def from_edges(
        cls, n_nodes: int, edges: Mapping[Edge, float], name: str = ""
    ) -> "WeightedDigraph":
        """Build from ``{(i, j): weight}`` with 0-based (receiver, sender) pairs."""
        adj = np.zeros((n_nodes, n_nodes))
        for (i, j), w in edges.items():
            adj[i, j] = w
        return cls(adj, name=name)


@dataclass(frozen=True)
class EdgeTrust:
    """Piecewise-constant, right-continuous trust level of a single edge."""

    initial: float = 1.0
    changes: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        changes = tuple((float(t), float(v)) for t, v in self.changes)
        object.__setattr__(self, "changes", changes)
        object.__setattr__(self, "initial", float(self.initial))
        for value in (self.initial, *(v for _, v in changes)):
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"trust value {value:g} outside [0, 1]")
        times = [t for t, _ in changes]
        if any(not np.isfinite(t) for t in times):
            raise ValidationError("trust breakpoints must be finite")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("trust breakpoints must be strictly increasing")

    def value_at(self, tau: float) -> float:
        times = [t for t, _ in self.changes]
        idx = bisect.bisect_right(times, tau)
        if idx == 0:
            return self.initial
        return self.changes[idx - 1][1]

    @property
    def terminal(self) -> float:
        return self.changes[-1][1] if self.changes else self.initial


@dataclass(frozen=True)
class TrustSchedule:
    """
    Trust weights gamma_ij(tau) in [0, 1] for every edge.

    Edges without an explicit entry use ``default``; the empty schedule with
    default 1 reproduces the raw adjacency exactly.
    """

    edges: Dict[Edge, EdgeTrust] = field(default_factory=dict)
    default: float = 1.0

    def __post_init__(self) -> None:
        edges = {(int(i), int(j)): trust for (i, j), trust in dict(self.edges).items()}
        for i, j in edges:
            if i < 0 or j < 0 or i == j:
                raise ValidationError(f"invalid trust edge ({i + 1}, {j + 1})", field="trust")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "default", float(self.default))
        if not 0.0 <= self.default <= 1.0:
            raise ValidationError(
                f"trust default {self.default:g} outside [0, 1]", field="trust.default"
            )

    @classmethod
    def uniform(cls) -> "TrustSchedule":
        return cls()

    @property
    def breakpoints(self) -> Tuple[float, ...]:
        """Sorted distinct fast-time instants where some gamma_ij changes."""
        times = {t for trust in self.edges.values() for t, _ in trust.changes}
        return tuple(sorted(times))

    @property
    def is_identity(self) -> bool:
        return not self.edges and self.default == 1.0

    def _fill(self, n_nodes: int, values: Mapping[Edge, float]) -> np.ndarray:
        gamma = np.full((n_nodes, n_nodes), self.default)
        for (i, j), value in values.items():
            if i >= n_nodes or j >= n_nodes:
                raise ValidationError(
                    f"trust edge ({i + 1}, {j + 1}) outside a {n_nodes}-node graph",
                    field="trust.edges",
                )
            gamma[i, j] = value
        return gamma

    def gamma(self, tau: float, n_nodes: int) -> np.ndarray:
        """N x N matrix of trust levels at fast time ``tau``."""
        return self._fill(
            n_nodes, {edge: trust.value_at(tau) for edge, trust in self.edges.items()}
        )

    def terminal_gamma(self, n_nodes: int) -> np.ndarray:
        """Trust levels after the last breakpoint."""
        return self._fill(
            n_nodes, {edge: trust.terminal for edge, trust in self.edges.items()}
        )


@dataclass(frozen=True, eq=False)
class Phase:
    """One switching phase: which graph is active, its pinning and dwell."""

    graph: str
    pinning: np.ndarray
    dwell: float

    def __post_init__(self) -> None:
        d = as_vector(self.pinning, f"graphs.{self.graph}.pinning")
        if np.any(d < 0.0):
            raise ValidationError(
                "pinning gains must be non-negative", field=f"graphs.{self.graph}.pinning"
            )
        dwell = float(self.dwell)
        if not np.isfinite(dwell) or dwell <= 0.0:
            raise ValidationError(
                f"dwell must be positive, got {self.dwell}", field="switching.phases"
            )
        object.__setattr__(self, "pinning", frozen(d))
        object.__setattr__(self, "dwell", dwell)


@dataclass(frozen=True)
class SwitchingSignal:
    """Ordered phases played with time-scale ratio ``epsilon``."""

    phases: Tuple[Phase, ...]
    cyclic: bool = True
    epsilon: float = 1.0

    def __post_init__(self) -> None:
        phases = tuple(self.phases)
        if not phases:
            raise ValidationError(
                "switching signal needs at least one phase", field="switching.phases"
            )
        eps = float(self.epsilon)
        if not np.isfinite(eps) or eps <= 0.0:
            raise ValidationError(
                f"epsilon must be positive, got {self.epsilon}", field="switching.epsilon"
            )
        object.__setattr__(self, "phases", phases)
        object.__setattr__(self, "epsilon", eps)
        ends = np.cumsum([ph.dwell for ph in phases])
        object.__setattr__(self, "_ends", frozen(ends))

    @property
    def period(self) -> float:
        """Total dwell of one pass through the phases, in fast time."""
        return float(self._ends[-1])  # type: ignore[attr-defined]

    @property
    def slow_period(self) -> float:
        return self.epsilon * self.period

    @property
    def min_dwell(self) -> float:
        return min(ph.dwell for ph in self.phases)

    @property
    def dwell_fractions(self) -> np.ndarray:
        return np.array([ph.dwell for ph in self.phases]) / self.period

    def with_epsilon(self, epsilon: float) -> "SwitchingSignal":
        return replace(self, epsilon=epsilon)

    def phase_index(self, t: float) -> int:
        """Index of the phase active at slow time ``t`` (right-continuous)."""
        tau = t / self.epsilon
        if self.cyclic:
            tau = tau % self.period
        elif tau >= self.period:
            return len(self.phases) - 1
        idx = int(np.searchsorted(self._ends, tau, side="right"))  # type: ignore[attr-defined]
        return min(idx, len(self.phases) - 1)

    def switching_times(self, t0: float, t1: float) -> np.ndarray:
        """Slow-time phase boundaries strictly inside ``(t0, t1)``."""
        ends = self._ends  # type: ignore[attr-defined]
        starts = np.concatenate(([0.0], ends[:-1]))
        if self.cyclic:
            period = self.period
            first = int(np.floor(t0 / self.slow_period)) - 1
            last = int(np.ceil(t1 / self.slow_period)) + 1
            cycles = np.arange(first, last + 1, dtype=float)
            fast = (cycles[:, None] * period + starts[None, :]).ravel()
        else:
            fast = starts[1:]
        slow = fast * self.epsilon
        return np.sort(slow[(slow > t0) & (slow < t1)])


@dataclass(frozen=True, eq=False)
class BlockLaplacian:
    """
    Laplacian of a clustered graph with per-cluster coupling gains.

    ``intra`` holds the unscaled block-diagonal intra-cluster Laplacian and
    ``inter`` the inter-cluster part L0 (its diagonal carries the inter row
    sums). The coupled Laplacian is ``L = blockdiag(c_l * intra_ll) + inter``
    and the pinning diagonal is ``D = diag(c_ibar * d_i)``.
    """

    intra: np.ndarray
    inter: np.ndarray
    pinning: np.ndarray
    cluster_gains: np.ndarray
    partition: ClusterPartition

    def __post_init__(self) -> None:
        for name in ("intra", "inter", "pinning", "cluster_gains"):
            object.__setattr__(self, name, frozen(np.array(getattr(self, name), dtype=float)))
        gain = self.cluster_gains[self.partition.labels]
        object.__setattr__(self, "_node_gain", frozen(gain))

    @property
    def n_nodes(self) -> int:
        return self.partition.n_nodes

    @property
    def node_gains(self) -> np.ndarray:
        """c_ibar for every node i."""
        return self._node_gain  # type: ignore[attr-defined, no-any-return]

    @property
    def L(self) -> np.ndarray:
        # intra is block diagonal, so scaling row i by c_ibar scales block (l, l) by c_l
        return self.node_gains[:, None] * self.intra + self.inter

    @property
    def effective_pinning(self) -> np.ndarray:
        return self.node_gains * self.pinning

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.effective_pinning)

    @property
    def grounded(self) -> np.ndarray:
        """L-tilde = L + D."""
        return self.L + self.D

    @property
    def adjacency(self) -> np.ndarray:
        """Effective coupling weights c_ij * a_ij recovered from L."""
        weights = -self.L
        np.fill_diagonal(weights, 0.0)
        return weights

    def block(self, ell: int, k: int) -> np.ndarray:
        rows = self.partition.members(ell)
        cols = self.partition.members(k)
        return self.L[np.ix_(rows, cols)]

    def base_grounded_block(self, ell: int) -> np.ndarray:
        """Unscaled grounded block intra_ll + diag(d_l) of cluster ``ell``."""
        idx = self.partition.members(ell)
        return self.intra[np.ix_(idx, idx)] + np.diag(self.pinning[idx])


@dataclass(frozen=True, eq=False)
class BalanceResult:
    passed: bool
    violations: Tuple[Tuple[int, int, float], ...] = ()


@dataclass(frozen=True, eq=False)
class TreeCheckResult:
    passed: bool
    per_cluster: Tuple[bool, ...]
    unreachable: Tuple[Tuple[int, ...], ...]


@dataclass(frozen=True, eq=False)
class AverageResult:
    """Average Laplacian L-infinity with its convergence trace."""

    L_inf: np.ndarray
    kappa: float
    beta_trace: np.ndarray
    sample_times: np.ndarray
    laplacian: BlockLaplacian
    adjacency: np.ndarray
    pinning: np.ndarray


def _laplacian(adj: np.ndarray) -> np.ndarray:
    lap = -adj.copy()
    np.fill_diagonal(lap, 0.0)
    np.fill_diagonal(lap, adj.sum(axis=1) - np.diag(adj))
    return lap


def _as_graph(graph: Union[WeightedDigraph, np.ndarray]) -> WeightedDigraph:
    if isinstance(graph, WeightedDigraph):
        return graph
    return WeightedDigraph(np.asarray(graph, dtype=float))


def _override_ratio(
    edge_gains: Mapping[Edge, float],
    partition: ClusterPartition,
    cluster_gains: np.ndarray,
    n_nodes: int,
) -> np.ndarray:
    ratio = np.ones((n_nodes, n_nodes))
    labels = partition.labels
    for (i, j), gain in edge_gains.items():
        if not (0 <= i < n_nodes and 0 <= j < n_nodes) or i == j:
            raise ValidationError(
                f"coupling override on invalid edge ({i + 1}, {j + 1})",
                field="coupling.edges",
            )
        if gain < 0.0 or not np.isfinite(gain):
            raise ValidationError(
                f"coupling override must be non-negative, got {gain}",
                field="coupling.edges",
            )
        default = cluster_gains[labels[i]] if labels[i] == labels[j] else 1.0
        ratio[i, j] = gain / default
    return ratio


def laplacian_of(
    graph: Union[WeightedDigraph, np.ndarray],
    trust: Optional[TrustSchedule],
    t: float,
    partition: ClusterPartition,
    pinning: Sequence[float],
    cluster_gains: Sequence[float],
    edge_gains: Optional[Mapping[Edge, float]] = None,
) -> BlockLaplacian:
    """
    Build the trust-weighted block Laplacian of ``graph`` at fast time ``t``.

    Args:
        graph: Weighted digraph (or raw adjacency matrix)
        trust: Trust schedule; ``None`` means gamma = 1 everywhere
        t: Fast-time argument at which gamma_ij is evaluated
        partition: Cluster partition of the nodes
        pinning: Pinning gains d_i >= 0
        cluster_gains: Per-cluster couplings c_l > 0
        edge_gains: Optional per-edge coupling overrides c_ij (0-based edges)

    Returns:
        BlockLaplacian with a_ij = gamma_ij(t) * alpha_ij

    Raises:
        ValidationError: On dimension mismatch, non-positive gain or NaN weight
    """
    g = _as_graph(graph)
    n = g.n_nodes
    if partition.n_nodes != n:
        raise ValidationError(
            f"dimension mismatch: partition has {partition.n_nodes} nodes, graph has {n}"
        )
    d = as_vector(pinning, "pinning", n)
    if np.any(d < 0.0):
        raise ValidationError("pinning gains must be non-negative", field="pinning")
    c = as_vector(cluster_gains, "coupling.clusters", partition.p)
    if np.any(c <= 0.0):
        raise ValidationError(
            "cluster gains must be positive", field="coupling.clusters", value=c.tolist()
        )

    weights = np.array(g.adjacency)
    if trust is not None and not trust.is_identity:
        weights = weights * trust.gamma(t, n)
    if edge_gains:
        weights = weights * _override_ratio(edge_gains, partition, c, n)

    same = block_diag_mask(partition.labels)
    intra = _laplacian(np.where(same, weights, 0.0))
    inter = _laplacian(np.where(same, 0.0, weights))
    return BlockLaplacian(intra, inter, d, c, partition)


def in_degree_balance_check(
    L: BlockLaplacian, tol: float = DEFAULT_BALANCE_TOL
) -> BalanceResult:
    """
    Check that inter-cluster weights into every node cancel per foreign cluster.

    Args:
        L: Block Laplacian to inspect
        tol: Absolute tolerance on each inter-cluster block row sum

    Returns:
        BalanceResult listing violating (node, cluster, row sum) triples
    """
    if tol < 0:
        raise ValidationError("tol must be non-negative")
    weights = -np.array(L.inter)
    np.fill_diagonal(weights, 0.0)
    labels = L.partition.labels
    violations = []
    for ell in range(L.partition.p):
        sums = weights[:, L.partition.members(ell)].sum(axis=1)
        for i in np.flatnonzero((labels != ell) & (np.abs(sums) > tol)):
            violations.append((int(i), ell, float(sums[i])))
    violations.sort()
    return BalanceResult(passed=not violations, violations=tuple(violations))


def _segments(
    signal: SwitchingSignal,
    trust: Optional[TrustSchedule],
    t0: float,
    t1: float,
    extra: Sequence[float] = (),
) -> Iterator[Tuple[float, float, int, float]]:
    """Yield (start, end, phase index, fast mid-time) over which everything is constant."""
    cuts = [t0, t1, *signal.switching_times(t0, t1)]
    if trust is not None:
        cuts.extend(
            b * signal.epsilon
            for b in trust.breakpoints
            if t0 < b * signal.epsilon < t1
        )
    cuts.extend(x for x in extra if t0 < x < t1)
    bounds = np.unique(np.asarray(cuts, dtype=float))
    for a, b in zip(bounds[:-1], bounds[1:]):
        mid = 0.5 * (a + b)
        yield float(a), float(b), signal.phase_index(mid), mid / signal.epsilon


def _lookup(graphs: Mapping[str, WeightedDigraph], name: str) -> WeightedDigraph:
    try:
        return graphs[name]
    except KeyError:
        raise ValidationError(f"unknown graph '{name}'", field="switching.phases")


def union_graph(
    signal: SwitchingSignal,
    graphs: Mapping[str, WeightedDigraph],
    t0: float,
    t1: float,
    trust: Optional[TrustSchedule] = None,
) -> WeightedDigraph:
    """
    Integrate the switching adjacency exactly over ``[t0, t1]`` (slow time).

    Raises:
        ValidationError: If ``t1 <= t0`` or a phase names an unknown graph
    """
    if not t1 > t0:
        raise ValidationError(f"union interval requires t1 > t0, got [{t0}, {t1}]")
    n = _lookup(graphs, signal.phases[0].graph).n_nodes
    acc = np.zeros((n, n))
    for a, b, k, tau in _segments(signal, trust, t0, t1):
        weights = _lookup(graphs, signal.phases[k].graph).adjacency
        if trust is not None and not trust.is_identity:
            weights = weights * trust.gamma(tau, n)
        acc += (b - a) * weights
    return WeightedDigraph(acc, name=f"union[{t0:g},{t1:g}]")


def union_pinning(signal: SwitchingSignal, t0: float, t1: float) -> np.ndarray:
    """Integral of the pinning vector d(t / epsilon) over ``[t0, t1]``."""
    if not t1 > t0:
        raise ValidationError(f"union interval requires t1 > t0, got [{t0}, {t1}]")
    acc = np.zeros_like(signal.phases[0].pinning)
    for a, b, k, _ in _segments(signal, None, t0, t1):
        acc = acc + (b - a) * signal.phases[k].pinning
    return acc


def average_laplacian(
    signal: SwitchingSignal,
    graphs: Mapping[str, WeightedDigraph],
    horizon: float,
    samples: int = 64,
    partition: Optional[ClusterPartition] = None,
    cluster_gains: Optional[Sequence[float]] = None,
    trust: Optional[TrustSchedule] = None,
    t0: float = 0.0,
    edge_gains: Optional[Mapping[Edge, float]] = None,
) -> AverageResult:
    """
    Average Laplacian of a switching signal and its convergence trace.

    Cyclic signals use the exact dwell-weighted period mean (with terminal
    trust levels); acyclic signals use the finite-horizon mean over
    ``[t0, t0 + horizon]``. ``beta_trace`` holds the spectral norm of the
    running mean of the grounded Laplacian minus its limit.

    Raises:
        ValidationError: On non-positive horizon, fewer than two samples or
            an unknown graph name
    """
    if horizon <= 0:
        raise ValidationError(f"horizon must be positive, got {horizon}")
    if samples < 2:
        raise ValidationError(f"samples must be at least 2, got {samples}")
    if not signal.phases:
        raise ValidationError("empty switching signal", field="switching.phases")

    n = _lookup(graphs, signal.phases[0].graph).n_nodes
    partition = partition or ClusterPartition.single(n)
    gains = np.ones(partition.p) if cluster_gains is None else np.asarray(cluster_gains, float)

    if signal.cyclic:
        fractions = signal.dwell_fractions
        adj_inf = sum(
            w * _lookup(graphs, ph.graph).adjacency
            for w, ph in zip(fractions, signal.phases)
        )
        if trust is not None and not trust.is_identity:
            adj_inf = adj_inf * trust.terminal_gamma(n)
        pin_inf = sum(w * ph.pinning for w, ph in zip(fractions, signal.phases))
    else:
        adj_inf = union_graph(signal, graphs, t0, t0 + horizon, trust).adjacency / horizon
        pin_inf = union_pinning(signal, t0, t0 + horizon) / horizon

    adj_inf = np.asarray(adj_inf, dtype=float)
    pin_inf = np.asarray(pin_inf, dtype=float)
    limit = laplacian_of(
        WeightedDigraph(adj_inf), None, 0.0, partition, pin_inf, gains, edge_gains
    )

    sample_times = np.linspace(horizon / samples, horizon, samples)
    targets = t0 + sample_times
    grounded_inf = limit.grounded
    acc = np.zeros((n, n))
    trace = np.empty(samples)
    cursor = 0
    cache: Dict[Tuple[int, float], np.ndarray] = {}
    for a, b, k, tau in _segments(signal, trust, t0, t0 + horizon, extra=targets):
        phase = signal.phases[k]
        key = (k, _trust_key(trust, tau))
        if key not in cache:
            cache[key] = laplacian_of(
                _lookup(graphs, phase.graph), trust, tau, partition,
                phase.pinning, gains, edge_gains,
            ).grounded
        acc += (b - a) * cache[key]
        while cursor < samples and b >= targets[cursor] - 1e-12 * max(1.0, abs(b)):
            elapsed = sample_times[cursor]
            trace[cursor] = np.linalg.norm(acc / elapsed - grounded_inf, 2)
            cursor += 1
    while cursor < samples:
        trace[cursor] = np.linalg.norm(acc / sample_times[cursor] - grounded_inf, 2)
        cursor += 1

    return AverageResult(
        L_inf=limit.L,
        kappa=float(trace.max()),
        beta_trace=trace,
        sample_times=sample_times,
        laplacian=limit,
        adjacency=adj_inf,
        pinning=pin_inf,
    )


def _trust_key(trust: Optional[TrustSchedule], tau: float) -> float:
    if trust is None or not trust.breakpoints:
        return 0.0
    idx = bisect.bisect_right(list(trust.breakpoints), tau)
    return float(idx)


def spanning_tree_check(
    L_inf: Union[np.ndarray, BlockLaplacian],
    partition: ClusterPartition,
    pinning: Sequence[float],
    tol: float = DEFAULT_EDGE_TOL,
) -> TreeCheckResult:
    """
    Check that every cluster is reachable from its virtual leader.

    Edges j -> i inside a cluster exist where |l_ij| > tol; a pinned node
    (d_i > tol) gets an edge from the leader.

    Returns:
        TreeCheckResult with per-cluster verdicts and unreachable nodes
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    lap = L_inf.L if isinstance(L_inf, BlockLaplacian) else np.asarray(L_inf, dtype=float)
    d = np.asarray(pinning, dtype=float)

    per_cluster = []
    unreachable = []
    for members in partition.clusters:
        graph = nx.DiGraph()
        graph.add_node(_LEADER)
        graph.add_nodes_from(members)
        for i in members:
            if d[i] > tol:
                graph.add_edge(_LEADER, i)
            for j in members:
                if i != j and abs(lap[i, j]) > tol:
                    graph.add_edge(j, i)
        reached = nx.descendants(graph, _LEADER)
        missing = tuple(sorted(i for i in members if i not in reached))
        per_cluster.append(not missing)
        unreachable.append(missing)

    return TreeCheckResult(
        passed=all(per_cluster),
        per_cluster=tuple(per_cluster),
        unreachable=tuple(unreachable),
    )


def instantaneous_tree_checks(
    signal: SwitchingSignal,
    graphs: Mapping[str, WeightedDigraph],
    partition: ClusterPartition,
    trust: Optional[TrustSchedule] = None,
    tol: float = DEFAULT_EDGE_TOL,
) -> List[TreeCheckResult]:
    """Spanning-tree verdict of each phase graph on its own (trust at tau = 0)."""
    results = []
    for phase in signal.phases:
        graph = _lookup(graphs, phase.graph)
        lap = laplacian_of(
            graph, trust, 0.0, partition, phase.pinning, np.ones(partition.p)
        )
        results.append(spanning_tree_check(lap, partition, phase.pinning, tol))
    return results
