"""
Condition audits, contraction certificates and necessity witnesses.

``audit_scenario`` runs every structural check on a scenario and folds the
outcomes into a ConditionReport whose exit code drives ``csync analyze``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .core import (
    CertificateError,
    ClusterSyncError,
    PreconditionError,
    ValidationError,
    sym,
)
from .gain_synthesis import (
    DEFAULT_PBH_TOL,
    DEFAULT_XI_TOL,
    CouplingThresholds,
    GainSet,
    PBHResult,
    assemble_xi,
    coupling_thresholds,
    format_eigenvalue,
    pbh_stabilizability_check,
    symmetric_part_thresholds,
    xi_certificate,
)
from .graph_core import (
    DEFAULT_BALANCE_TOL,
    DEFAULT_EDGE_TOL,
    AverageResult,
    BalanceResult,
    BlockLaplacian,
    ClusterPartition,
    TreeCheckResult,
    in_degree_balance_check,
    instantaneous_tree_checks,
    spanning_tree_check,
)
from .scenario import ClusterScenario
from .simulator import (
    SimConfig,
    Trajectory,
    error_jacobian,
    estimate_decay_rate,
    simulate,
)

logger = logging.getLogger(__name__)

DEFAULT_CONTRACTION_TOL = 1e-9
KERNEL_RTOL = 1e-8


class Verdict(Enum):
    CERTIFIED = "certified"
    UNCERTIFIED = "uncertified"
    NECESSARILY_FAILS = "necessarily-fails"


EXIT_CERTIFIED = 0
EXIT_NOT_STABILIZABLE = 10
EXIT_UNBALANCED = 11
EXIT_NO_AVERAGE_TREE = 12
EXIT_COUPLING = 13
EXIT_EPSILON = 14


@dataclass
class EpsilonGuidance:
    """Empirical largest epsilon with a positive fitted decay rate."""

    current: float
    largest: Optional[float]
    trials: List[Tuple[float, float]] = field(default_factory=list)
    empirical: bool = True

    @property
    def acceptable(self) -> bool:
        return self.largest is not None and self.current <= self.largest


@dataclass(frozen=True, eq=False)
class ContractionResult:
    lambda_max: float
    passed: bool


@dataclass
class ConditionReport:
    """Verdicts for stabilizability, balance, average tree and coupling."""

    scenario_name: str
    epsilon: float
    stabilizability: PBHResult
    balance: BalanceResult
    average_tree: TreeCheckResult
    phase_trees: List[TreeCheckResult]
    coupling: np.ndarray
    kappa: float
    thresholds: Optional[np.ndarray] = None
    necessity_thresholds: Optional[np.ndarray] = None
    positivity_margin: Optional[float] = None
    contraction: Optional[ContractionResult] = None
    certificate_error: Optional[str] = None
    epsilon_guidance: Optional[EpsilonGuidance] = None
    reasons: List[str] = field(default_factory=list)
    verdict: Verdict = Verdict.UNCERTIFIED

    @property
    def stabilizable(self) -> bool:
        return self.stabilizability.is_stabilizable

    @property
    def balanced(self) -> bool:
        return self.balance.passed

    @property
    def tree_reachable(self) -> bool:
        return self.average_tree.passed and self.certificate_error is None

    @property
    def coupling_ok(self) -> bool:
        return self.thresholds is not None and bool(np.all(self.coupling > self.thresholds))

    @property
    def exit_code(self) -> int:
        if not self.stabilizable:
            return EXIT_NOT_STABILIZABLE
        if not self.balanced:
            return EXIT_UNBALANCED
        if not self.tree_reachable:
            return EXIT_NO_AVERAGE_TREE
        if not self.coupling_ok:
            return EXIT_COUPLING
        if self.epsilon_guidance is not None and not self.epsilon_guidance.acceptable:
            return EXIT_EPSILON
        return EXIT_CERTIFIED

    def to_dict(self) -> Dict[str, Any]:
        offending = self.stabilizability.offending
        data: Dict[str, Any] = {
            "scenario": self.scenario_name,
            "verdict": self.verdict.value,
            "exit_code": self.exit_code,
            "epsilon": self.epsilon,
            "stabilizable": "pass" if self.stabilizable else "fail",
            "stabilizability": self.stabilizability.verdict.value,
            "balanced": "pass" if self.balanced else "fail",
            "tree_reachable": "pass" if self.tree_reachable else "fail",
            "phase_trees": ",".join(
                "pass" if tree.passed else "fail" for tree in self.phase_trees
            ),
            "kappa": self.kappa,
            "coupling": ",".join(f"{c:.6g}" for c in self.coupling),
            "thresholds": (
                ",".join(f"{c:.6g}" for c in self.thresholds)
                if self.thresholds is not None
                else "none"
            ),
            "necessity_thresholds": (
                ",".join(f"{c:.6g}" for c in self.necessity_thresholds)
                if self.necessity_thresholds is not None
                else "none"
            ),
            "coupling_check": "pass" if self.coupling_ok else "fail",
        }
        if offending is not None:
            data["offending_eigenvalue"] = format_eigenvalue(offending.eigenvalue)
        if self.positivity_margin is not None:
            data["positivity_margin"] = self.positivity_margin
        if self.contraction is not None:
            data["contraction_lambda_max"] = self.contraction.lambda_max
        if self.epsilon_guidance is not None:
            guide = self.epsilon_guidance
            data["epsilon_guidance"] = "acceptable" if guide.acceptable else "too-large"
            data["epsilon_largest_empirical"] = (
                f"{guide.largest:.6g}" if guide.largest is not None else "none"
            )
        for k, reason in enumerate(self.reasons):
            data[f"reason_{k + 1}"] = reason
        return data

    def to_kv(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, float):
                value = f"{value:.6g}"
            lines.append(f"{key}={value}")
        return "\n".join(lines)

    def to_text(self) -> str:
        def mark(ok: bool) -> str:
            return "PASS" if ok else "FAIL"

        lines = [
            f"Scenario: {self.scenario_name}",
            f"Epsilon: {self.epsilon:g}",
            "",
            f"Stabilizable (A, B):        {mark(self.stabilizable)}"
            f" [{self.stabilizability.verdict.value}]",
            f"In-degree balance:          {mark(self.balanced)}",
            f"Average spanning tree:      {mark(self.tree_reachable)}",
            "Instantaneous phase trees: "
            + ", ".join(mark(tree.passed) for tree in self.phase_trees),
            f"Average convergence bound kappa: {self.kappa:.6g}",
            "",
            "Coupling per cluster:",
        ]
        for ell, c in enumerate(self.coupling):
            threshold = (
                f"c* = {self.thresholds[ell]:.6g}" if self.thresholds is not None else "c* = n/a"
            )
            alt = (
                f", 1/(2 lambda_min) = {self.necessity_thresholds[ell]:.6g}"
                if self.necessity_thresholds is not None
                else ""
            )
            lines.append(f"  cluster {ell + 1}: c = {c:.6g}, {threshold}{alt}")
        if self.positivity_margin is not None:
            lines.append(f"Xi-weighted positivity margin: {self.positivity_margin:.6g}")
        if self.contraction is not None:
            lines.append(
                f"Average contraction lambda_max: {self.contraction.lambda_max:.6g}"
                f" ({mark(self.contraction.passed)})"
            )
        if self.epsilon_guidance is not None:
            guide = self.epsilon_guidance
            largest = f"{guide.largest:.6g}" if guide.largest is not None else "none found"
            lines.append(
                f"Epsilon guidance (empirical): largest decaying epsilon {largest}, "
                f"current {'acceptable' if guide.acceptable else 'too large'}"
            )
        lines.append("")
        lines.append(f"Verdict: {self.verdict.value}")
        for reason in self.reasons:
            lines.append(f"  - {reason}")
        return "\n".join(lines)


def scenario_balance_check(
    scenario: ClusterScenario, tol: float = DEFAULT_BALANCE_TOL
) -> BalanceResult:
    """In-degree balance of every phase graph on every trust segment."""
    taus = (0.0, *scenario.trust.breakpoints)
    violations = set()
    for k in range(len(scenario.signal.phases)):
        for tau in taus:
            result = in_degree_balance_check(scenario.phase_laplacian(k, tau), tol)
            violations.update(result.violations)
    ordered = tuple(sorted(violations))
    return BalanceResult(passed=not ordered, violations=ordered)


def metric_factor(Xi: Sequence[float], P: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor Theta with Theta^T Theta = Xi (x) P."""
    return scipy.linalg.cholesky(np.kron(np.diag(np.asarray(Xi, float)), P))


def audit_scenario(
    scenario: ClusterScenario,
    gains: Optional[GainSet] = None,
    pbh_tol: float = DEFAULT_PBH_TOL,
    balance_tol: float = DEFAULT_BALANCE_TOL,
    edge_tol: float = DEFAULT_EDGE_TOL,
    xi_tol: float = DEFAULT_XI_TOL,
    contraction_tol: float = DEFAULT_CONTRACTION_TOL,
    samples: int = 64,
    with_epsilon_guidance: bool = False,
) -> ConditionReport:
    """
    Run every condition check on ``scenario``.

    Args:
        scenario: Scenario to audit
        gains: Optional gain set; enables the average contraction check
        pbh_tol: Relative PBH tolerance
        balance_tol: Tolerance for inter-cluster row sums
        edge_tol: Edge-existence tolerance for the spanning-tree check
        xi_tol: Certificate tolerance for Xi
        contraction_tol: Negativity margin for the contraction check
        samples: Number of beta-trace samples
        with_epsilon_guidance: Also bisect epsilon by simulation; a scenario
            epsilon above the empirical bound is left uncertified (exit 14)

    Returns:
        ConditionReport with verdict and reasons
    """
    pbh = pbh_stabilizability_check(scenario.plant, pbh_tol)
    balance = scenario_balance_check(scenario, balance_tol)
    average = scenario.average(samples=samples)
    tree = spanning_tree_check(average.L_inf, scenario.partition, average.pinning, edge_tol)
    phase_trees = instantaneous_tree_checks(
        scenario.signal, scenario.graphs, scenario.partition, scenario.trust, edge_tol
    )

    report = ConditionReport(
        scenario_name=scenario.name,
        epsilon=scenario.signal.epsilon,
        stabilizability=pbh,
        balance=balance,
        average_tree=tree,
        phase_trees=phase_trees,
        coupling=np.array(scenario.coupling),
        kappa=average.kappa,
    )

    necessity = False
    if not pbh.is_stabilizable:
        mode = pbh.offending
        assert mode is not None
        necessity = True
        report.reasons.append(
            f"uncontrollable mode lambda={format_eigenvalue(mode.eigenvalue)}"
        )
    if not balance.passed:
        i, ell, total = balance.violations[0]
        report.reasons.append(
            f"in-degree balance violated at node {i + 1} from cluster {ell + 1} "
            f"(sum {total:.3g}; {len(balance.violations)} violation(s))"
        )
    if not tree.passed:
        necessity = True
        for ell, missing in enumerate(tree.unreachable):
            if missing:
                nodes = ", ".join(str(i + 1) for i in missing)
                report.reasons.append(
                    f"average graph of cluster {ell + 1} has no spanning tree from its "
                    f"leader (unreachable: {nodes})"
                )
    else:
        report.necessity_thresholds = symmetric_part_thresholds(average.laplacian)
        try:
            Xi = assemble_xi(average.laplacian, xi_tol)
            thresholds = coupling_thresholds(average.laplacian, Xi)
            report.thresholds = thresholds.values
            report.positivity_margin = xi_certificate(average.laplacian.grounded, Xi)
            if gains is not None:
                report.contraction = contraction_check(
                    error_jacobian(scenario.plant, gains.K, average.laplacian),
                    np.eye(scenario.n_nodes * scenario.n_states),
                    metric_factor(Xi, gains.P),
                    contraction_tol,
                )
            for ell, (c, c_star) in enumerate(zip(scenario.coupling, thresholds.values)):
                if not c > c_star:
                    report.reasons.append(
                        f"coupling c_{ell + 1}={c:.6g} not above threshold {c_star:.6g}"
                    )
        except CertificateError as e:
            report.certificate_error = str(e)
            report.reasons.append(f"spectral certificate failed: {e}")

    if with_epsilon_guidance and gains is not None and report.exit_code == EXIT_CERTIFIED:
        guide = epsilon_guidance(scenario, gains)
        report.epsilon_guidance = guide
        if not guide.acceptable:
            bound = f"{guide.largest:.6g}" if guide.largest is not None else "none found"
            report.reasons.append(
                f"epsilon={guide.current:.6g} above the largest decaying epsilon "
                f"({bound}, empirical)"
            )

    if necessity:
        report.verdict = Verdict.NECESSARILY_FAILS
    elif report.reasons:
        report.verdict = Verdict.UNCERTIFIED
    else:
        report.verdict = Verdict.CERTIFIED
    logger.debug("Audit of %s: %s", scenario.name, report.verdict.value)
    return report


def coupling_certificate(
    scenario: ClusterScenario, xi_tol: float = DEFAULT_XI_TOL
) -> Tuple[np.ndarray, CouplingThresholds]:
    """Xi and coupling thresholds of the scenario's average Laplacian."""
    average = scenario.average()
    Xi = assemble_xi(average.laplacian, xi_tol)
    return Xi, coupling_thresholds(average.laplacian, Xi)


def contraction_check(
    J: np.ndarray,
    V: np.ndarray,
    Theta: np.ndarray,
    tol: float = DEFAULT_CONTRACTION_TOL,
) -> ContractionResult:
    """
    Largest eigenvalue of sym(Theta V J V^T Theta^-1).

    Raises:
        ValidationError: If V has non-orthonormal rows, Theta is singular or
            shapes disagree
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    Theta = np.atleast_2d(np.asarray(Theta, dtype=float))
    r, d = V.shape
    if J.shape != (d, d) or Theta.shape != (r, r):
        raise ValidationError(
            f"shape mismatch: J {J.shape}, V {V.shape}, Theta {Theta.shape}"
        )
    if not np.allclose(V @ V.T, np.eye(r), atol=1e-9):
        raise ValidationError("rows of V must be orthonormal")
    if not np.all(np.isfinite(Theta)) or np.linalg.cond(Theta) > 1e12:
        raise ValidationError("Theta is singular")
    projected = Theta @ V @ J @ V.T @ np.linalg.inv(Theta)
    lam = float(np.linalg.eigvalsh(sym(projected))[-1])
    return ContractionResult(lambda_max=lam, passed=lam <= -tol)


@dataclass(frozen=True, eq=False)
class FamilyContraction:
    members: Tuple[Tuple[str, float], ...]
    average: float

    @property
    def uniform_pass(self) -> bool:
        return all(lam < 0 for _, lam in self.members) and self.average < 0


def contraction_family_check(
    scenario: ClusterScenario,
    gains: GainSet,
    Xi: Sequence[float],
    tol: float = DEFAULT_CONTRACTION_TOL,
) -> FamilyContraction:
    """
    Contraction margins for each phase Laplacian and the average, all in the
    metric Xi (x) P on the tracking error coordinates.
    """
    Theta = metric_factor(Xi, gains.P)
    V = np.eye(scenario.n_nodes * scenario.n_states)
    members = []
    for k, phase in enumerate(scenario.signal.phases):
        J = error_jacobian(scenario.plant, gains.K, scenario.phase_laplacian(k))
        members.append((f"{k + 1}:{phase.graph}", contraction_check(J, V, Theta, tol).lambda_max))
    average = scenario.average().laplacian
    avg = contraction_check(error_jacobian(scenario.plant, gains.K, average), V, Theta, tol)
    return FamilyContraction(members=tuple(members), average=avg.lambda_max)


def synchronization_complement_basis(partition: ClusterPartition, n: int) -> np.ndarray:
    """
    Orthonormal rows spanning the complement of span{1_l (x) e_k}.

    Returns:
        ((N - p) * n) x (N * n) matrix V with V V^T = I
    """
    rows = []
    for members in partition.clusters:
        size = len(members)
        if size < 2:
            continue
        within = scipy.linalg.null_space(np.ones((1, size))).T
        block = np.zeros((size - 1, partition.n_nodes))
        block[:, list(members)] = within
        rows.append(block)
    if not rows:
        return np.zeros((0, partition.n_nodes * n))
    return np.kron(np.vstack(rows), np.eye(n))


def _kernel(matrix: np.ndarray, rtol: float = KERNEL_RTOL) -> np.ndarray:
    _, s, vh = np.linalg.svd(matrix)
    if s.size == 0 or s[0] == 0:
        return np.eye(matrix.shape[1])
    rank = int(np.sum(s >= rtol * s[0]))
    return vh[rank:].conj().T


@dataclass(frozen=True, eq=False)
class NecessityWitness:
    """Initial condition whose error cannot vanish without an average tree."""

    kernel_basis: np.ndarray
    grounded_kernel_basis: np.ndarray
    excess_dimension: int
    direction: np.ndarray
    eigenvalue: complex
    initial_states: np.ndarray
    trajectory: Trajectory
    projected_error: np.ndarray

    @property
    def kernel_dimension(self) -> int:
        return int(self.kernel_basis.shape[1])

    @property
    def retained_fraction(self) -> float:
        """min_t |<k, e(t)>| / |<k, e(0)>|."""
        start = abs(self.projected_error[0])
        return float(np.min(np.abs(self.projected_error)) / start) if start > 0 else 0.0

    @property
    def holds(self) -> bool:
        return self.retained_fraction >= 0.5


def necessity_witness_no_average_tree(
    scenario: ClusterScenario,
    gains: GainSet,
    config: Optional[SimConfig] = None,
    edge_tol: float = DEFAULT_EDGE_TOL,
) -> NecessityWitness:
    """
    Build and simulate an error direction left untouched by the average coupling.

    The direction is ``w (x) v`` with w in the kernel of the average grounded
    Laplacian and v a (near-)neutral eigenvector of A.

    Raises:
        PreconditionError: If the average graph has a spanning tree in every
            cluster, or its grounded Laplacian is nonsingular
    """
    average: AverageResult = scenario.average()
    tree = spanning_tree_check(average.L_inf, scenario.partition, average.pinning, edge_tol)
    if tree.passed:
        raise PreconditionError("average graph has a spanning tree; no witness exists")

    kernel = _kernel(average.L_inf)
    grounded_kernel = _kernel(average.laplacian.grounded)
    if grounded_kernel.shape[1] == 0:
        raise PreconditionError("average grounded Laplacian is nonsingular")

    V = synchronization_complement_basis(scenario.partition, 1)
    excess = int(np.linalg.matrix_rank(V @ kernel, tol=1e-9)) if V.size else 0

    w = np.real(grounded_kernel[:, 0])
    w = w / np.linalg.norm(w)

    eigvals, eigvecs = np.linalg.eig(scenario.plant.A)
    neutral = [k for k, lam in enumerate(eigvals) if lam.real >= -1e-6]
    pool = neutral or list(range(eigvals.size))
    idx = min(pool, key=lambda k: abs(eigvals[k].real)) if neutral else max(
        pool, key=lambda k: eigvals[k].real
    )
    v = np.real(eigvecs[:, idx])
    if np.linalg.norm(v) < 1e-12:
        v = np.imag(eigvecs[:, idx])
    v = v / np.linalg.norm(v)

    direction = np.kron(w, v)
    leaders = np.asarray(scenario.leaders)[scenario.partition.labels]
    x0 = leaders + direction.reshape(scenario.n_nodes, scenario.n_states)
    traj = simulate(scenario, gains, config, initial_states=x0)
    projected = traj.errors.reshape(traj.times.size, -1) @ direction

    logger.debug(
        "Witness: kernel dim %d, grounded kernel dim %d, lambda %s",
        kernel.shape[1], grounded_kernel.shape[1], format_eigenvalue(eigvals[idx]),
    )
    return NecessityWitness(
        kernel_basis=kernel,
        grounded_kernel_basis=grounded_kernel,
        excess_dimension=excess,
        direction=direction,
        eigenvalue=complex(eigvals[idx]),
        initial_states=x0,
        trajectory=traj,
        projected_error=projected,
    )


def adapted_sim_config(scenario: ClusterScenario, epsilon: float) -> SimConfig:
    sim = scenario.sim
    max_dt = epsilon * scenario.signal.min_dwell / 4.0
    if sim.dt <= max_dt:
        return sim.with_overrides(epsilon=None)
    steps = int(np.ceil(sim.horizon / max_dt))
    dt = sim.horizon / steps
    stride = max(1, int(round(sim.record_stride * sim.dt / dt)))
    return sim.with_overrides(dt=dt, record_stride=stride, epsilon=None)


def simulated_decay_rate(
    scenario: ClusterScenario, gains: GainSet, epsilon: float
) -> float:
    """Fitted decay rate of the total error over the second half of the horizon."""
    candidate = scenario.with_epsilon(epsilon)
    config = adapted_sim_config(candidate, epsilon)
    traj = simulate(candidate, gains, config)
    horizon = float(traj.times[-1])
    fit = estimate_decay_rate(traj.times, traj.total_error, (0.5 * horizon, horizon))
    return fit.rate


def epsilon_guidance(
    scenario: ClusterScenario,
    gains: GainSet,
    upper: float = 1.0,
    iterations: int = 6,
) -> EpsilonGuidance:
    """
    Geometric bisection for the largest epsilon whose simulated error decays.

    The current epsilon is tried first; when it does not decay no bound is
    reported. The bound is empirical: it depends on the seed, horizon and
    fit window.
    """
    current = scenario.signal.epsilon
    trials: List[Tuple[float, float]] = []

    def decays(eps: float) -> bool:
        try:
            rate = simulated_decay_rate(scenario, gains, eps)
        except ClusterSyncError as e:
            logger.debug("epsilon %g trial failed: %s", eps, e)
            rate = float("-inf")
        trials.append((eps, rate))
        return rate > 0

    lo = current
    hi = max(upper, 2.0 * current)
    if not decays(lo):
        return EpsilonGuidance(current=current, largest=None, trials=trials)
    if decays(hi):
        return EpsilonGuidance(current=current, largest=hi, trials=trials)
    for _ in range(iterations):
        mid = float(np.sqrt(lo * hi))
        if decays(mid):
            lo = mid
        else:
            hi = mid
    return EpsilonGuidance(current=current, largest=lo, trials=trials)
