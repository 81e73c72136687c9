"""
Stabilizability tests, Riccati gain design and coupling certificates.

The feedback gain solves ``A^T P + P A + W - P B B^T P = 0`` and the
per-cluster diagonal weights Xi certify that the average grounded blocks
are "Xi-positive"; both feed the coupling thresholds c*_l.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .core import (
    CertificateError,
    NotStabilizableError,
    SynthesisError,
    ValidationError,
    as_matrix,
    frozen,
    sym,
)
from .graph_core import BlockLaplacian, ClusterPartition

logger = logging.getLogger(__name__)

DEFAULT_PBH_TOL = 1e-8
DEFAULT_XI_TOL = 1e-9
RICCATI_RESIDUAL_LIMIT = 1e-8


@dataclass(frozen=True, eq=False)
class PlantModel:
    """Linear agent dynamics x' = A x + B u."""

    A: np.ndarray
    B: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        prefix = f"{self.name}." if self.name else "plant."
        A = as_matrix(self.A, prefix + "A")
        if A.shape[0] != A.shape[1]:
            raise ValidationError(f"A must be square, got {A.shape}", field=prefix + "A")
        try:
            B = np.array(self.B, dtype=float)
        except (TypeError, ValueError) as e:
            raise ValidationError(f"not a numeric matrix ({e})", field=prefix + "B")
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        B = as_matrix(B, prefix + "B", (A.shape[0], None))
        object.__setattr__(self, "A", frozen(A))
        object.__setattr__(self, "B", frozen(B))

    @property
    def n(self) -> int:
        return int(self.A.shape[0])

    @property
    def m(self) -> int:
        return int(self.B.shape[1])


class Stabilizability(Enum):
    CONTROLLABLE = "controllable"
    STABILIZABLE = "stabilizable"
    NEITHER = "neither"


@dataclass(frozen=True, eq=False)
class UncontrollableMode:
    eigenvalue: complex
    left_vector: np.ndarray
    sigma_min: float


@dataclass(frozen=True, eq=False)
class PBHResult:
    """Outcome of the Popov-Belevitch-Hautus rank test."""

    verdict: Stabilizability
    eigenvalues: np.ndarray
    sigma_min: np.ndarray
    threshold: float
    uncontrollable: Tuple[UncontrollableMode, ...] = ()

    @property
    def is_controllable(self) -> bool:
        return self.verdict is Stabilizability.CONTROLLABLE

    @property
    def is_stabilizable(self) -> bool:
        return self.verdict is not Stabilizability.NEITHER

    @property
    def offending(self) -> Optional[UncontrollableMode]:
        """Uncontrollable mode with the largest real part, if any."""
        if not self.uncontrollable:
            return None
        return max(self.uncontrollable, key=lambda mode: mode.eigenvalue.real)


def _group_eigenvalues(eigs: np.ndarray, radius: float) -> List[complex]:
    """Merge numerically split eigenvalues (defective blocks) into their means."""
    remaining = sorted((complex(e) for e in eigs), key=lambda z: (z.real, z.imag))
    groups: List[List[complex]] = []
    for value in remaining:
        for group in groups:
            if abs(value - np.mean(group)) <= radius:
                group.append(value)
                break
        else:
            groups.append([value])
    return [complex(np.mean(group)) for group in groups]


def _clean(value: complex, scale: float) -> complex:
    if abs(value.imag) <= 1e-12 * max(1.0, scale):
        return complex(value.real, 0.0)
    return value


def _normalize_left(u: np.ndarray) -> np.ndarray:
    v = np.conj(u)
    k = int(np.argmax(np.abs(v)))
    v = v * (np.conj(v[k]) / abs(v[k]))
    v = v / np.linalg.norm(v)
    if np.max(np.abs(v.imag)) < 1e-10:
        return v.real.copy()
    return v


def pbh_stabilizability_check(
    plant: PlantModel, tol: float = DEFAULT_PBH_TOL
) -> PBHResult:
    """
    Classify (A, B) as controllable, stabilizable or neither.

    Each distinct eigenvalue lambda of A is tested with the smallest
    singular value of ``[A - lambda I, B]`` against ``tol * ||[A B]||_F``.
    Failing modes carry a left vector v with ``v^T (A - lambda I) = 0`` and
    ``v^T B = 0``.

    Raises:
        ValidationError: If tol is not positive
        SynthesisError: If the eigensolver does not converge
    """
    if tol <= 0:
        raise ValidationError(f"tol must be positive, got {tol}")
    A, B = plant.A, plant.B
    n = plant.n
    scale = float(np.linalg.norm(np.hstack([A, B]), "fro"))
    threshold = tol * scale if scale > 0 else tol

    try:
        eigs = scipy.linalg.eigvals(A)
    except np.linalg.LinAlgError as e:
        raise SynthesisError(f"eigensolver did not converge: {e}")

    a_norm = float(np.linalg.norm(A, 2)) if n else 0.0
    distinct = [
        _clean(lam, a_norm)
        for lam in _group_eigenvalues(eigs, 1e-4 * max(1.0, a_norm))
    ]

    sigmas = []
    failing = []
    for lam in distinct:
        M = np.hstack([A - lam * np.eye(n), B]).astype(complex)
        U, s, _ = scipy.linalg.svd(M)
        smallest = float(s[n - 1]) if s.size >= n else 0.0
        sigmas.append(smallest)
        if smallest <= threshold:
            failing.append(
                UncontrollableMode(
                    eigenvalue=lam,
                    left_vector=frozen(_normalize_left(U[:, n - 1])),
                    sigma_min=smallest,
                )
            )

    if not failing:
        verdict = Stabilizability.CONTROLLABLE
    elif all(mode.eigenvalue.real < -threshold for mode in failing):
        verdict = Stabilizability.STABILIZABLE
    else:
        verdict = Stabilizability.NEITHER

    logger.debug("PBH verdict %s (threshold %.3g)", verdict.value, threshold)
    return PBHResult(
        verdict=verdict,
        eigenvalues=frozen(np.array(distinct)),
        sigma_min=frozen(np.array(sigmas)),
        threshold=threshold,
        uncontrollable=tuple(failing),
    )


@dataclass(frozen=True, eq=False)
class GainSet:
    """Riccati solution, feedback gain and optional coupling certificate."""

    P: np.ndarray
    K: np.ndarray
    xi: float
    weight: Optional[np.ndarray] = None
    residual: float = 0.0
    literal_residual: float = 0.0
    closed_loop_abscissa: float = float("nan")
    Xi: Optional[np.ndarray] = None
    thresholds: Optional[np.ndarray] = None

    def with_coupling(self, Xi: np.ndarray, thresholds: np.ndarray) -> "GainSet":
        return replace(self, Xi=np.asarray(Xi, float), thresholds=np.asarray(thresholds, float))


def riccati_residual(plant: PlantModel, P: np.ndarray, weight: np.ndarray) -> float:
    """Frobenius norm of A^T P + P A + W - P B B^T P."""
    A, B = plant.A, plant.B
    R = A.T @ P + P @ A + weight - P @ B @ B.T @ P
    return float(np.linalg.norm(R, "fro"))


def _newton_refine(plant: PlantModel, P: np.ndarray, weight: np.ndarray) -> np.ndarray:
    # one Kleinman step around the stabilizing gain of P
    K = plant.B.T @ P
    closed = plant.A - plant.B @ K
    X = scipy.linalg.solve_continuous_lyapunov(closed.T, -(weight + K.T @ K))
    return sym(X)


def synthesize_gain(
    plant: PlantModel,
    weight: Optional[np.ndarray] = None,
    tol: float = DEFAULT_PBH_TOL,
) -> GainSet:
    """
    Design K = B^T P from the stabilizing Riccati solution.

    Args:
        plant: Agent dynamics
        weight: Symmetric positive definite state weight W (identity if None)
        tol: Tolerance for the PBH test and the xi-inequality check

    Returns:
        GainSet with P, K, xi = lambda_min(W) / lambda_max(P) and diagnostics

    Raises:
        ValidationError: If W is not symmetric positive definite
        NotStabilizableError: If (A, B) has an unstable uncontrollable mode
        SynthesisError: If the Riccati solution fails its checks
    """
    n = plant.n
    if weight is None:
        W = np.eye(n)
    else:
        W = as_matrix(weight, "gain.weight", (n, n))
        if not np.allclose(W, W.T, atol=1e-12 * max(1.0, np.abs(W).max())):
            raise ValidationError("weight must be symmetric", field="gain.weight")
    w_eigs = np.linalg.eigvalsh(sym(W))
    if w_eigs[0] <= 0:
        raise ValidationError(
            f"weight must be positive definite (lambda_min = {w_eigs[0]:.3g})",
            field="gain.weight",
        )

    pbh = pbh_stabilizability_check(plant, tol)
    if not pbh.is_stabilizable:
        mode = pbh.offending
        assert mode is not None
        raise NotStabilizableError(
            f"(A, B) is not stabilizable: uncontrollable mode "
            f"lambda={format_eigenvalue(mode.eigenvalue)}",
            eigenvalue=mode.eigenvalue,
            left_vector=mode.left_vector,
        )

    try:
        P = scipy.linalg.solve_continuous_are(plant.A, plant.B, W, np.eye(plant.m))
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SynthesisError(f"Riccati solver failed: {e}")
    P = sym(P)
    residual = riccati_residual(plant, P, W)

    try:
        refined = _newton_refine(plant, P, W)
        refined_residual = riccati_residual(plant, refined, W)
        if refined_residual < residual:
            P, residual = refined, refined_residual
    except (np.linalg.LinAlgError, ValueError) as e:
        logger.debug("Newton refinement skipped: %s", e)

    if residual > RICCATI_RESIDUAL_LIMIT:
        raise SynthesisError(f"Riccati residual {residual:.3g} exceeds {RICCATI_RESIDUAL_LIMIT:g}")

    p_eigs = np.linalg.eigvalsh(P)
    if p_eigs[0] <= 0:
        raise SynthesisError(f"Riccati solution is not positive definite ({p_eigs[0]:.3g})")

    K = plant.B.T @ P
    abscissa = float(np.max(np.linalg.eigvals(plant.A - plant.B @ K).real))
    if abscissa >= 0:
        raise SynthesisError(f"closed loop A - BK is not Hurwitz (abscissa {abscissa:.3g})")

    xi = float(w_eigs[0] / p_eigs[-1])
    ineq = np.linalg.eigvalsh(-W + xi * P)[-1]
    if ineq > tol * max(1.0, float(p_eigs[-1])):
        raise SynthesisError(f"xi-inequality violated (lambda_max = {ineq:.3g})")

    BBt = plant.B @ plant.B.T
    literal = float(
        np.linalg.norm(P @ plant.A.T + plant.A @ P - xi * P @ BBt @ P - xi * P, "fro")
    )

    logger.debug("Riccati residual %.3g, xi %.6g", residual, xi)
    return GainSet(
        P=frozen(P),
        K=frozen(K),
        xi=xi,
        weight=frozen(W),
        residual=residual,
        literal_residual=literal,
        closed_loop_abscissa=abscissa,
    )


def format_eigenvalue(value: complex) -> str:
    value = complex(value)
    if value.imag == 0:
        return f"{value.real:.6g}"
    sign = "+" if value.imag >= 0 else "-"
    return f"{value.real:.6g}{sign}{abs(value.imag):.6g}j"


def xi_certificate(L_grounded: np.ndarray, xi: Sequence[float]) -> float:
    """lambda_min(Xi L + L^T Xi) for diagonal Xi given by ``xi``."""
    X = np.diag(np.asarray(xi, dtype=float))
    L = np.asarray(L_grounded, dtype=float)
    return float(np.linalg.eigvalsh(X @ L + L.T @ X)[0])


def compute_xi(L_grounded: np.ndarray, tol: float = DEFAULT_XI_TOL) -> np.ndarray:
    """
    Positive diagonal weights Xi with Xi L + L^T Xi positive definite.

    Uses ``Xi = diag(p / q)`` where ``L^T p = 1`` and ``L q = 1``; both are
    positive for a nonsingular M-matrix.

    Returns:
        The diagonal of Xi

    Raises:
        CertificateError: If L is singular or the certificate is not positive
    """
    L = as_matrix(L_grounded, "grounded block")
    if L.shape[0] != L.shape[1]:
        raise ValidationError(f"grounded block must be square, got {L.shape}")
    ones = np.ones(L.shape[0])
    try:
        q = np.linalg.solve(L, ones)
        p = np.linalg.solve(L.T, ones)
    except np.linalg.LinAlgError:
        raise CertificateError("grounded block is singular")
    if np.any(q <= 0) or np.any(p <= 0):
        raise CertificateError("grounded block is not a nonsingular M-matrix")

    xi = p / q
    certificate = xi_certificate(L, xi)
    if certificate <= tol:
        raise CertificateError(
            f"Xi certificate not positive (lambda_min = {certificate:.3g})"
        )
    return xi


def assemble_xi(average: BlockLaplacian, tol: float = DEFAULT_XI_TOL) -> np.ndarray:
    """Stack the per-cluster Xi_l of the unscaled average grounded blocks."""
    xi = np.empty(average.n_nodes)
    for ell in range(average.partition.p):
        try:
            xi[average.partition.members(ell)] = compute_xi(
                average.base_grounded_block(ell), tol
            )
        except CertificateError as e:
            raise CertificateError(f"cluster {ell + 1}: {e}")
    return xi


@dataclass(frozen=True, eq=False)
class CouplingThresholds:
    values: np.ndarray
    inter_eigenvalue: float
    cluster_eigenvalues: np.ndarray

    def certifies(self, cluster_gains: Sequence[float]) -> bool:
        return bool(np.all(np.asarray(cluster_gains, dtype=float) > self.values))


def coupling_thresholds(
    L_inf: BlockLaplacian,
    Xi: Sequence[float],
    partition: Optional[ClusterPartition] = None,
) -> CouplingThresholds:
    """
    Smallest per-cluster couplings c*_l that make Xi L-tilde + L-tilde^T Xi positive.

    ``c*_l = max(0, -lambda_min(Xi L0 + L0^T Xi) / lambda_min(Xi_l Lb_l + Lb_l^T Xi_l))``
    where L0 is the inter-cluster part and Lb_l the unscaled grounded block.

    Raises:
        ValidationError: On partition or dimension mismatch
        CertificateError: If some cluster denominator is not positive
    """
    partition = partition or L_inf.partition
    if partition != L_inf.partition:
        raise ValidationError("partition does not match the Laplacian")
    xi = np.asarray(Xi, dtype=float)
    if xi.ndim == 2:
        xi = np.diag(xi)
    if xi.shape != (L_inf.n_nodes,):
        raise ValidationError(f"Xi must have {L_inf.n_nodes} entries, got {xi.shape}")

    X = np.diag(xi)
    L0 = L_inf.inter
    numerator = float(np.linalg.eigvalsh(X @ L0 + L0.T @ X)[0])

    denominators = np.empty(partition.p)
    for ell in range(partition.p):
        idx = partition.members(ell)
        denominators[ell] = xi_certificate(L_inf.base_grounded_block(ell), xi[idx])
        if denominators[ell] <= 0:
            raise CertificateError(
                f"cluster {ell + 1} is not pinned and connected on average "
                f"(lambda_min = {denominators[ell]:.3g})"
            )
    values = np.maximum(0.0, -numerator / denominators)
    return CouplingThresholds(
        values=frozen(values),
        inter_eigenvalue=numerator,
        cluster_eigenvalues=frozen(denominators),
    )


def symmetric_part_thresholds(L_inf: BlockLaplacian) -> np.ndarray:
    """
    Per-cluster ``1 / (2 lambda_min(sym Lb_l))``; ``inf`` where that eigenvalue
    is not positive.
    """
    out = np.empty(L_inf.partition.p)
    for ell in range(L_inf.partition.p):
        lam = float(np.linalg.eigvalsh(sym(L_inf.base_grounded_block(ell)))[0])
        out[ell] = 1.0 / (2.0 * lam) if lam > 0 else np.inf
    return out


@dataclass(frozen=True, eq=False)
class WeylBounds:
    lower: np.ndarray
    upper: np.ndarray

    def contains(self, eigenvalues: Sequence[float], atol: float = 1e-9) -> bool:
        lam = np.sort(np.asarray(eigenvalues, dtype=float))
        return bool(np.all(lam >= self.lower - atol) and np.all(lam <= self.upper + atol))


def weyl_bounds(H1: np.ndarray, H2: np.ndarray, tol: float = 1e-10) -> WeylBounds:
    """
    Interlacing bounds for the eigenvalues of H1 + H2.

    ``lambda_i(H1) + lambda_min(H2) <= lambda_i(H1 + H2) <= lambda_i(H1) + lambda_max(H2)``

    Raises:
        ValidationError: If either matrix is not Hermitian or shapes differ
    """
    A = np.asarray(H1)
    B = np.asarray(H2)
    if A.shape != B.shape or A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValidationError(f"shape mismatch: {A.shape} vs {B.shape}")
    for name, M in (("H1", A), ("H2", B)):
        if np.max(np.abs(M - M.conj().T), initial=0.0) > tol * max(1.0, np.abs(M).max()):
            raise ValidationError(f"{name} is not Hermitian")
    e1 = np.linalg.eigvalsh(A)
    e2 = np.linalg.eigvalsh(B)
    return WeylBounds(lower=e1 + e2[0], upper=e1 + e2[-1])
