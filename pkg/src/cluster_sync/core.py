"""Core errors and small numeric helpers shared by every Cluster Sync module."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Optional, Sequence, Tuple

import numpy as np


class ClusterSyncError(Exception):
    """Base exception for Cluster Sync errors."""

    pass


class ValidationError(ClusterSyncError):
    """Raised when input validation fails.

    ``field`` carries a dotted path (``graphs.G1.adjacency[2]``) when the
    offending value came from a scenario file.
    """

    def __init__(self, message: str, field: Optional[str] = None, value: Any = None):
        super().__init__(message)
        self.field = field
        self.value = value

    def __str__(self) -> str:
        message = super().__str__()
        if self.field:
            return f"{self.field}: {message}"
        return message


class NotStabilizableError(ClusterSyncError):
    """Raised when the plant has an uncontrollable mode with Re(lambda) >= 0."""

    def __init__(
        self,
        message: str,
        eigenvalue: Optional[complex] = None,
        left_vector: Optional[np.ndarray] = None,
    ):
        super().__init__(message)
        self.eigenvalue = eigenvalue
        self.left_vector = left_vector


class SynthesisError(ClusterSyncError):
    """Raised when the Riccati solution fails its residual or stability checks."""

    pass


class CertificateError(ClusterSyncError):
    """Raised when a spectral certificate (Xi, thresholds) cannot be issued."""

    pass


class PreconditionError(ClusterSyncError):
    """Raised when an operation is called outside its precondition."""

    pass


class DivergenceError(ClusterSyncError):
    """Raised when a simulated state becomes non-finite or exceeds the limit."""

    def __init__(self, message: str, last_time: float = 0.0):
        super().__init__(message)
        self.last_time = last_time


def ensure_dir(path: Path) -> Path:
    """
    Ensure a directory exists, creating it if necessary.

    Args:
        path: Directory path to create

    Returns:
        The created directory path

    Raises:
        ValidationError: If directory cannot be created
    """
    try:
        path.mkdir(parents=True, exist_ok=True)
        return path
    except OSError as e:
        raise ValidationError(f"Failed to create directory {path}: {e}")


def as_matrix(
    value: Any,
    name: str,
    shape: Optional[Tuple[Optional[int], Optional[int]]] = None,
) -> np.ndarray:
    """
    Convert a value to a finite 2-D float array.

    Args:
        value: Nested sequence or array
        name: Field name used in error messages
        shape: Expected (rows, cols); ``None`` entries are not checked

    Returns:
        A new float64 array

    Raises:
        ValidationError: If the value is ragged, not 2-D, has the wrong
            shape or contains NaN/inf
    """
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"not a numeric matrix ({e})", field=name, value=value)
    if arr.ndim != 2:
        raise ValidationError(
            f"expected a 2-D matrix, got {arr.ndim} dimension(s)", field=name
        )
    if shape is not None:
        rows, cols = shape
        if rows is not None and arr.shape[0] != rows:
            raise ValidationError(
                f"expected {rows} rows, got {arr.shape[0]}", field=name
            )
        if cols is not None and arr.shape[1] != cols:
            raise ValidationError(
                f"expected {cols} columns, got {arr.shape[1]}", field=name
            )
    if not np.all(np.isfinite(arr)):
        raise ValidationError("contains non-finite entries", field=name)
    return arr


def as_vector(value: Any, name: str, length: Optional[int] = None) -> np.ndarray:
    """Convert a value to a finite 1-D float array of optional fixed length."""
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as e:
        raise ValidationError(f"not a numeric vector ({e})", field=name, value=value)
    if arr.ndim != 1:
        raise ValidationError(
            f"expected a vector, got {arr.ndim} dimension(s)", field=name
        )
    if length is not None and arr.shape[0] != length:
        raise ValidationError(
            f"expected length {length}, got {arr.shape[0]}", field=name
        )
    if not np.all(np.isfinite(arr)):
        raise ValidationError("contains non-finite entries", field=name)
    return arr


def frozen(arr: np.ndarray) -> np.ndarray:
    """Return ``arr`` marked read-only."""
    arr.setflags(write=False)
    return arr


def sym(matrix: np.ndarray) -> np.ndarray:
    """Symmetric part (M + M^T) / 2."""
    return 0.5 * (matrix + matrix.T)


def block_diag_mask(labels: Sequence[int]) -> np.ndarray:
    """Boolean N x N mask that is True where both nodes share a cluster."""
    lab = np.asarray(labels)
    return lab[:, None] == lab[None, :]


def format_error_message(error: Exception, context: Optional[str] = None) -> str:
    """
    Format error message with context and suggestions.

    Args:
        error: The exception that occurred
        context: Additional context about where the error occurred

    Returns:
        Formatted error message with suggestions
    """
    error_type = type(error).__name__
    error_msg = str(error)

    if context:
        message = f"Error in {context}: {error_msg}"
    else:
        message = f"{error_type}: {error_msg}"

    suggestions = []

    if isinstance(error, ValidationError):
        suggestions.extend(
            [
                "• Check the named field in the scenario file",
                "• Matrices are row-major lists; node indices start at 1",
            ]
        )
    elif isinstance(error, NotStabilizableError):
        suggestions.extend(
            [
                "• Inspect the reported eigenvalue and left eigenvector",
                "• Add an input direction that reaches the offending mode",
            ]
        )
    elif isinstance(error, CertificateError):
        suggestions.extend(
            [
                "• Make sure every cluster is reached by a pinned node on average",
                "• Intra-cluster weights must be non-negative",
            ]
        )
    elif isinstance(error, DivergenceError):
        suggestions.extend(
            [
                "• Reduce epsilon or increase the cluster couplings",
                "• Shorten the horizon to inspect the transient",
            ]
        )

    if suggestions:
        message += "\n\nSuggestions:\n" + "\n".join(suggestions)

    return message
