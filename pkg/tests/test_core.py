"""Tests for core module functionality."""

from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from cluster_sync.core import (
    CertificateError,
    ClusterSyncError,
    DivergenceError,
    NotStabilizableError,
    PreconditionError,
    SynthesisError,
    ValidationError,
    as_matrix,
    as_vector,
    block_diag_mask,
    ensure_dir,
    format_error_message,
    frozen,
    sym,
)


class TestErrors:
    """Test the exception hierarchy."""

    @pytest.mark.parametrize(
        "error_cls",
        [
            ValidationError,
            NotStabilizableError,
            SynthesisError,
            CertificateError,
            PreconditionError,
            DivergenceError,
        ],
    )
    def test_every_error_is_a_cluster_sync_error(self, error_cls):
        """Test that library errors share one base class."""
        assert issubclass(error_cls, ClusterSyncError)

    def test_validation_error_prefixes_field(self):
        """Test that the field path leads the message."""
        error = ValidationError("row has 3 entries, expected 4", field="plant.A[1]")
        assert str(error) == "plant.A[1]: row has 3 entries, expected 4"
        assert error.field == "plant.A[1]"

    def test_validation_error_without_field(self):
        """Test the plain message when no field is known."""
        assert str(ValidationError("bad input")) == "bad input"

    def test_not_stabilizable_carries_mode(self):
        """Test that the offending eigenpair is attached."""
        error = NotStabilizableError("nope", eigenvalue=5.0, left_vector=np.eye(4)[3])
        assert error.eigenvalue == 5.0
        assert error.left_vector[3] == 1.0

    def test_divergence_error_carries_time(self):
        """Test that the last finite time is attached."""
        assert DivergenceError("boom", last_time=1.25).last_time == 1.25


class TestEnsureDir:
    """Test directory creation."""

    def test_creates_nested_directories(self, tmp_path: Path):
        """Test creating a nested directory."""
        target = tmp_path / "a" / "b" / "c"
        assert ensure_dir(target) == target
        assert target.is_dir()

    def test_existing_directory_is_fine(self, tmp_path: Path):
        """Test that an existing directory is accepted."""
        assert ensure_dir(tmp_path) == tmp_path

    def test_failure_raises_validation_error(self, tmp_path: Path):
        """Test that OS errors are wrapped."""
        with patch.object(Path, "mkdir", side_effect=PermissionError("denied")):
            with pytest.raises(ValidationError, match="Failed to create directory"):
                ensure_dir(tmp_path / "x")


class TestMatrixHelpers:
    """Test numeric conversion helpers."""

    def test_as_matrix_accepts_nested_lists(self):
        """Test conversion of a row-major list."""
        arr = as_matrix([[1, 2], [3, 4]], "M")
        assert arr.dtype == float
        assert arr.shape == (2, 2)

    def test_as_matrix_rejects_ragged_rows(self):
        """Test that ragged rows raise with the field name."""
        with pytest.raises(ValidationError) as exc:
            as_matrix([[1, 2], [3]], "plant.A")
        assert exc.value.field == "plant.A"

    def test_as_matrix_checks_shape(self):
        """Test the optional shape check."""
        with pytest.raises(ValidationError, match="expected 3 rows"):
            as_matrix([[1, 2]], "M", (3, None))
        with pytest.raises(ValidationError, match="expected 1 columns"):
            as_matrix([[1, 2]], "M", (None, 1))

    def test_as_matrix_rejects_vectors_and_nan(self):
        """Test dimension and finiteness checks."""
        with pytest.raises(ValidationError, match="2-D"):
            as_matrix([1, 2], "M")
        with pytest.raises(ValidationError, match="non-finite"):
            as_matrix([[np.nan]], "M")

    def test_as_vector(self):
        """Test vector conversion with a length check."""
        assert as_vector([1, 2, 3], "d", 3).tolist() == [1.0, 2.0, 3.0]
        with pytest.raises(ValidationError, match="expected length 2"):
            as_vector([1, 2, 3], "d", 2)
        with pytest.raises(ValidationError, match="expected a vector"):
            as_vector([[1]], "d")

    def test_frozen_marks_read_only(self):
        """Test that frozen arrays refuse writes."""
        arr = frozen(np.zeros(3))
        with pytest.raises(ValueError):
            arr[0] = 1.0

    def test_sym(self):
        """Test the symmetric part."""
        M = np.array([[1.0, 2.0], [0.0, 3.0]])
        np.testing.assert_array_equal(sym(M), [[1.0, 1.0], [1.0, 3.0]])

    def test_block_diag_mask(self):
        """Test the same-cluster mask."""
        mask = block_diag_mask([0, 0, 1])
        assert mask[0, 1] and not mask[0, 2] and mask[2, 2]


class TestFormatErrorMessage:
    """Test error message formatting."""

    def test_context_is_included(self):
        """Test that context leads the message."""
        message = format_error_message(ValueError("bad"), "loading scenario")
        assert message.startswith("Error in loading scenario: bad")

    def test_type_name_without_context(self):
        """Test the fallback prefix."""
        assert format_error_message(ValueError("bad")) == "ValueError: bad"

    @pytest.mark.parametrize(
        "error, hint",
        [
            (ValidationError("x"), "node indices start at 1"),
            (NotStabilizableError("x"), "left eigenvector"),
            (CertificateError("x"), "pinned node on average"),
            (DivergenceError("x"), "Reduce epsilon"),
        ],
    )
    def test_suggestions_per_error_family(self, error, hint):
        """Test that each error family gets its own suggestions."""
        message = format_error_message(error)
        assert "Suggestions:" in message
        assert hint in message
