"""
Fixed-step simulation of pinned agents tracking cluster leaders.

The joint state stacks every agent x_i followed by every leader s_l. Between
switching instants the dynamics are linear and time invariant, so each
(phase, trust segment) pair maps to one cached system matrix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.stats

from .core import DivergenceError, ValidationError, as_matrix, as_vector, frozen
from .gain_synthesis import GainSet, PlantModel
from .graph_core import BlockLaplacian, ClusterPartition

if TYPE_CHECKING:
    from .scenario import ClusterScenario

logger = logging.getLogger(__name__)

DEFAULT_DIVERGENCE_LIMIT = 1e12

Rhs = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class SimConfig:
    """Integration settings; ``epsilon`` overrides the scenario value when set."""

    dt: float = 0.0025
    horizon: float = 10.0
    epsilon: Optional[float] = None
    init_range: Tuple[Tuple[float, float], ...] = ((-10.0, 10.0),)
    seed: int = 0
    record_stride: int = 1
    divergence_limit: float = DEFAULT_DIVERGENCE_LIMIT

    def __post_init__(self) -> None:
        ranges = np.array(self.init_range, dtype=float)
        if ranges.ndim == 1:
            ranges = ranges.reshape(1, -1)
        if ranges.ndim != 2 or ranges.shape[1] != 2 or ranges.shape[0] == 0:
            raise ValidationError(
                "init_range must be [lo, hi] or a list of [lo, hi] pairs",
                field="sim.init_range",
            )
        if np.any(ranges[:, 0] > ranges[:, 1]) or not np.all(np.isfinite(ranges)):
            raise ValidationError("init_range needs finite lo <= hi", field="sim.init_range")
        object.__setattr__(
            self, "init_range", tuple((float(lo), float(hi)) for lo, hi in ranges)
        )
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}", field="sim.dt")
        if not self.horizon >= self.dt:
            raise ValidationError(
                f"horizon {self.horizon} must be at least dt {self.dt}", field="sim.horizon"
            )
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError(
                f"epsilon must be positive, got {self.epsilon}", field="sim.epsilon"
            )
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValidationError(
                f"record_stride must be an integer >= 1, got {self.record_stride}",
                field="sim.record_stride",
            )
        if not self.divergence_limit > 0:
            raise ValidationError("divergence_limit must be positive", field="sim")
        object.__setattr__(self, "record_stride", int(self.record_stride))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def n_steps(self) -> int:
        steps = int(round(self.horizon / self.dt))
        if abs(steps * self.dt - self.horizon) > 1e-9 * max(1.0, self.horizon):
            raise ValidationError(
                f"horizon {self.horizon} is not a multiple of dt {self.dt}",
                field="sim.horizon",
            )
        return steps

    def ranges(self, n: int) -> np.ndarray:
        ranges = np.array(self.init_range)
        if ranges.shape[0] == 1:
            return np.repeat(ranges, n, axis=0)
        if ranges.shape[0] != n:
            raise ValidationError(
                f"init_range has {ranges.shape[0]} entries for {n} state dimensions",
                field="sim.init_range",
            )
        return ranges

    def with_overrides(self, **changes: object) -> "SimConfig":
        return replace(self, **changes)  # type: ignore[arg-type]


def cluster_errors(
    agent_states: np.ndarray, leader_states: np.ndarray, partition: ClusterPartition
) -> np.ndarray:
    """E_l = sum over i in V_l of ||x_i - s_l|| for stacked (K, N, n) states."""
    agents = np.asarray(agent_states, dtype=float)
    leaders = np.asarray(leader_states, dtype=float)
    diffs = agents - leaders[..., partition.labels, :]
    norms = np.linalg.norm(diffs, axis=-1)
    return np.stack(
        [norms[..., partition.members(ell)].sum(axis=-1) for ell in range(partition.p)],
        axis=-1,
    )


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded agent and leader states with the cluster error series."""

    times: np.ndarray
    agent_states: np.ndarray
    leader_states: np.ndarray
    error_series: np.ndarray
    partition: ClusterPartition
    epsilon: float = 1.0

    @property
    def errors(self) -> np.ndarray:
        """e_i(t) = x_i(t) - s_ibar(t), shape (K, N, n)."""
        return self.agent_states - self.leader_states[:, self.partition.labels, :]

    @property
    def total_error(self) -> np.ndarray:
        return self.error_series.sum(axis=1)

    def final_ratio(self) -> np.ndarray:
        """Per-cluster E_l(T) / E_l(0); 0 where both are zero."""
        start = self.error_series[0]
        end = self.error_series[-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(start > 0, end / np.where(start > 0, start, 1.0), 0.0)
        return np.where((start == 0) & (end > 0), np.inf, ratio)

    @property
    def total_final_ratio(self) -> float:
        total = self.total_error
        if total[0] == 0:
            return 0.0 if total[-1] == 0 else float("inf")
        return float(total[-1] / total[0])


def closed_loop_matrix(
    plant: PlantModel, K: np.ndarray, laplacian: BlockLaplacian
) -> np.ndarray:
    """
    System matrix of the stacked (agents, leaders) state for one Laplacian.

    ``[[I (x) A - Lt (x) BK, C (x) BK], [0, I (x) A]]`` with ``C[i, ibar] = c_ibar d_i``.
    """
    N = laplacian.n_nodes
    p = laplacian.partition.p
    n = plant.n
    BK = plant.B @ K
    pin = np.zeros((N, p))
    pin[np.arange(N), laplacian.partition.labels] = laplacian.effective_pinning
    top = np.hstack(
        [np.kron(np.eye(N), plant.A) - np.kron(laplacian.grounded, BK), np.kron(pin, BK)]
    )
    bottom = np.hstack([np.zeros((p * n, N * n)), np.kron(np.eye(p), plant.A)])
    return np.vstack([top, bottom])


def error_jacobian(plant: PlantModel, K: np.ndarray, laplacian: BlockLaplacian) -> np.ndarray:
    """I (x) A - Lt (x) BK, the generator of the tracking error system."""
    return np.kron(np.eye(laplacian.n_nodes), plant.A) - np.kron(
        laplacian.grounded, plant.B @ K
    )


class ClosedLoopSystem:
    """Piecewise-constant joint dynamics of a scenario under a fixed gain."""

    def __init__(
        self,
        scenario: "ClusterScenario",
        gains: GainSet,
        epsilon: Optional[float] = None,
        divergence_limit: float = DEFAULT_DIVERGENCE_LIMIT,
    ):
        self.scenario = scenario if epsilon is None else scenario.with_epsilon(epsilon)
        self.plant = self.scenario.plant
        K = np.asarray(gains.K, dtype=float)
        if K.shape != (self.plant.m, self.plant.n):
            raise ValidationError(
                f"gain shape {K.shape} does not match plant ({self.plant.m}, {self.plant.n})"
            )
        self.K = K
        self.divergence_limit = divergence_limit
        self._trust_breaks = np.array(self.scenario.trust.breakpoints, dtype=float)
        self._cache: Dict[Tuple[int, int], np.ndarray] = {}

    @property
    def epsilon(self) -> float:
        return self.scenario.signal.epsilon

    @property
    def dimension(self) -> int:
        s = self.scenario
        return (s.n_nodes + s.partition.p) * s.n_states

    def segment_key(self, t: float) -> Tuple[int, int]:
        tau = t / self.epsilon
        trust_idx = int(np.searchsorted(self._trust_breaks, tau, side="right"))
        return self.scenario.signal.phase_index(t), trust_idx

    def laplacian_at(self, t: float) -> BlockLaplacian:
        return self.scenario.laplacian_at(t)

    def matrix_at(self, t: float) -> np.ndarray:
        key = self.segment_key(t)
        matrix = self._cache.get(key)
        if matrix is None:
            matrix = closed_loop_matrix(self.plant, self.K, self.laplacian_at(t))
            self._cache[key] = matrix
        return matrix

    def boundaries(self, t0: float, t1: float) -> np.ndarray:
        """Slow-time instants in (t0, t1) where the system matrix may change."""
        times = [self.scenario.signal.switching_times(t0, t1)]
        if self._trust_breaks.size:
            slow = self._trust_breaks * self.epsilon
            times.append(slow[(slow > t0) & (slow < t1)])
        return np.unique(np.concatenate(times))


def control_input(
    i: int,
    states: np.ndarray,
    leaders: np.ndarray,
    L_t: BlockLaplacian,
    K: np.ndarray,
) -> np.ndarray:
    """
    Feedback u_i = K [sum_j w_ij (x_j - x_i) + c_ibar d_i (s_ibar - x_i)].

    ``w_ij`` are the effective coupling weights of ``L_t`` (cluster gain on
    intra-cluster edges, unscaled between clusters).
    """
    x = np.asarray(states, dtype=float)
    s = np.asarray(leaders, dtype=float)
    gain = np.asarray(K, dtype=float)
    N = x.shape[0]
    if not 0 <= i < N:
        raise ValidationError(f"agent index {i} out of range 0..{N - 1}")
    if L_t.n_nodes != N or gain.shape[1] != x.shape[1] or s.shape[0] != L_t.partition.p:
        raise ValidationError("gain, states and Laplacian dimensions disagree")
    weights = L_t.adjacency[i]
    consensus = weights @ x - weights.sum() * x[i]
    ell = L_t.partition.cluster_of(i)
    pin = L_t.effective_pinning[i] * (s[ell] - x[i])
    return gain @ (consensus + pin)  # type: ignore[no-any-return]


def rk4_step(rhs: Rhs, t: float, y: np.ndarray, h: float) -> np.ndarray:
    """One classical Runge-Kutta step."""
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _check_finite(y: np.ndarray, t: float, limit: float) -> None:
    if not np.all(np.isfinite(y)) or np.max(np.abs(y), initial=0.0) > limit:
        raise DivergenceError(f"state diverged after t={t:.6g}", last_time=t)


def step(
    state: np.ndarray,
    t: float,
    dt: float,
    system: Union[ClosedLoopSystem, np.ndarray, Rhs],
    divergence_limit: float = DEFAULT_DIVERGENCE_LIMIT,
) -> np.ndarray:
    """
    Advance ``state`` by one RK4 step of length ``dt``.

    ``system`` is a ClosedLoopSystem (its matrix is taken on the segment
    holding the step midpoint; callers snap steps to switching instants),
    a constant matrix, or a right-hand side ``f(t, y)``.

    Raises:
        ValidationError: If dt is not positive
        DivergenceError: If the new state is non-finite or exceeds the limit
    """
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    y = np.asarray(state, dtype=float)
    if isinstance(system, ClosedLoopSystem):
        matrix = system.matrix_at(t + 0.5 * dt)
        limit = system.divergence_limit
        rhs: Rhs = lambda _t, v: matrix @ v  # noqa: E731
    elif callable(system):
        rhs = system
        limit = divergence_limit
    else:
        matrix = np.asarray(system, dtype=float)
        limit = divergence_limit
        rhs = lambda _t, v: matrix @ v  # noqa: E731
    nxt = rk4_step(rhs, t, y, dt)
    _check_finite(nxt, t, limit)
    return nxt


def simulate(
    scenario: "ClusterScenario",
    gains: GainSet,
    config: Optional[SimConfig] = None,
    initial_states: Optional[np.ndarray] = None,
) -> Trajectory:
    """
    Integrate the closed loop from random (or given) agent states.

    Args:
        scenario: Network, plant and leader initial states
        gains: Gain set whose K drives every agent
        config: Integration settings; the scenario's own when None
        initial_states: Optional N x n agent states replacing the random draw

    Returns:
        Trajectory recorded every ``record_stride`` steps

    Raises:
        ValidationError: If the config violates dt <= epsilon * min dwell / 4
        DivergenceError: If the state blows up
    """
    config = config or scenario.sim
    epsilon = config.epsilon if config.epsilon is not None else scenario.signal.epsilon
    system = ClosedLoopSystem(
        scenario, gains, epsilon=epsilon, divergence_limit=config.divergence_limit
    )
    signal = system.scenario.signal

    max_dt = epsilon * signal.min_dwell / 4.0
    if config.dt > max_dt * (1.0 + 1e-9):
        raise ValidationError(
            f"dt {config.dt:g} exceeds epsilon * min dwell / 4 = {max_dt:g}", field="sim.dt"
        )
    n_steps = config.n_steps
    N, n, p = scenario.n_nodes, scenario.n_states, scenario.partition.p

    if initial_states is None:
        rng = np.random.default_rng(config.seed)
        ranges = config.ranges(n)
        x0 = rng.uniform(ranges[:, 0], ranges[:, 1], size=(N, n))
    else:
        x0 = as_matrix(initial_states, "initial_states", (N, n))
    y = np.concatenate([x0.ravel(), np.asarray(scenario.leaders, dtype=float).ravel()])

    stride = config.record_stride
    n_records = n_steps // stride + 1
    states = np.empty((n_records, y.size))
    states[0] = y

    dt = config.dt
    horizon = n_steps * dt
    switches = system.boundaries(0.0, horizon)
    snap = 1e-9 * dt
    cursor = 0
    logger.debug(
        "Simulating %d steps (dt=%g, epsilon=%g, %d switching instants)",
        n_steps, dt, epsilon, switches.size,
    )

    for k in range(n_steps):
        t_start = k * dt
        t_end = (k + 1) * dt
        while cursor < switches.size and switches[cursor] <= t_start + snap:
            cursor += 1
        t = t_start
        while cursor < switches.size and switches[cursor] < t_end - snap:
            y = step(y, t, switches[cursor] - t, system)
            t = float(switches[cursor])
            cursor += 1
        y = step(y, t, t_end - t, system)
        if (k + 1) % stride == 0:
            states[(k + 1) // stride] = y

    times = np.arange(n_records) * stride * dt
    agents = states[:, : N * n].reshape(n_records, N, n)
    leaders = states[:, N * n :].reshape(n_records, p, n)
    return Trajectory(
        times=frozen(times),
        agent_states=frozen(agents),
        leader_states=frozen(leaders),
        error_series=frozen(cluster_errors(agents, leaders, scenario.partition)),
        partition=scenario.partition,
        epsilon=epsilon,
    )


def error_metrics(
    traj: Trajectory, partition: Optional[ClusterPartition] = None
) -> np.ndarray:
    """Per-cluster error series E_l(t) recomputed from the recorded states."""
    if traj.times.size == 0:
        raise ValidationError("trajectory is empty")
    return cluster_errors(traj.agent_states, traj.leader_states, partition or traj.partition)


@dataclass(frozen=True)
class DecayFit:
    rate: float
    r_squared: float
    intercept: float
    window: Tuple[float, float]


def estimate_decay_rate(
    times: Sequence[float],
    series: Sequence[float],
    window: Optional[Tuple[float, float]] = None,
) -> DecayFit:
    """
    Least-squares slope of -ln E(t) over ``window``.

    Raises:
        ValidationError: If the window holds fewer than two samples or the
            series is not strictly positive on it
    """
    t = np.asarray(times, dtype=float)
    e = np.asarray(series, dtype=float)
    if t.shape != e.shape:
        raise ValidationError("times and series lengths differ")
    lo, hi = window if window is not None else (float(t.min()), float(t.max()))
    mask = (t >= lo) & (t <= hi)
    if np.count_nonzero(mask) < 2:
        raise ValidationError(f"decay window [{lo:g}, {hi:g}] holds fewer than two samples")
    if np.any(e[mask] <= 0) or not np.all(np.isfinite(e[mask])):
        raise ValidationError("error series must be strictly positive on the decay window")

    y = -np.log(e[mask])
    fit = scipy.stats.linregress(t[mask], y)
    r_squared = 1.0 if np.ptp(y) == 0 else float(fit.rvalue**2)
    return DecayFit(
        rate=float(fit.slope),
        r_squared=r_squared,
        intercept=float(fit.intercept),
        window=(float(lo), float(hi)),
    )


@dataclass(frozen=True, eq=False)
class ModeTrace:
    """Deviation of v^T e_i(t) from the autonomous mode e^{lambda t} v^T e_i(0)."""

    times: np.ndarray
    projection: np.ndarray
    reference: np.ndarray
    residual: np.ndarray
    relative: np.ndarray

    def max_relative(self, t_max: Optional[float] = None) -> float:
        mask = np.ones(self.times.size, bool) if t_max is None else self.times <= t_max
        return float(np.max(self.relative[mask]))


def uncontrollable_mode_trace(
    traj: Trajectory,
    v: Sequence[complex],
    lam: complex,
    plant: PlantModel,
    tol: float = 1e-8,
) -> ModeTrace:
    """
    Compare each agent's error projection on ``v`` against e^{lambda t}.

    Raises:
        ValidationError: If (v, lambda) is not a left eigenpair of A within tol
    """
    vec = np.asarray(v, dtype=complex)
    if vec.shape != (plant.n,):
        raise ValidationError(f"v must have {plant.n} entries, got {vec.shape}")
    norm_v = np.linalg.norm(vec)
    if norm_v == 0:
        raise ValidationError("v must be non-zero")
    mismatch = np.linalg.norm(vec @ plant.A - lam * vec)
    if mismatch > tol * max(1.0, np.linalg.norm(plant.A, 2)) * norm_v:
        raise ValidationError(
            f"(v, lambda) is not a left eigenpair of A (residual {mismatch:.3g})"
        )

    projection = traj.errors @ vec
    elapsed = traj.times - traj.times[0]
    reference = np.exp(lam * elapsed)[:, None] * projection[0][None, :]
    residual = np.abs(projection - reference)
    scale = np.maximum(np.abs(reference), np.finfo(float).tiny)
    return ModeTrace(
        times=traj.times,
        projection=projection,
        reference=reference,
        residual=residual,
        relative=residual / scale,
    )
