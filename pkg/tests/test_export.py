"""Tests for CSV and YAML writers."""

from pathlib import Path

import numpy as np
import pytest

from cluster_sync.batch import SweepRow
from cluster_sync.core import ValidationError
from cluster_sync.export import (
    SWEEP_HEADER,
    gain_set_to_dict,
    read_csv_columns,
    read_gain_file,
    trajectory_header,
    write_gain_file,
    write_sweep_csv,
    write_text,
    write_trajectory_csv,
)


class TestTrajectoryCsv:
    """Test trajectory output."""

    def test_header(self):
        """Test error and state column names."""
        assert trajectory_header(2) == ["t", "E_1", "E_2"]
        full = trajectory_header(2, 7, 4, full_state=True)
        assert len(full) == 31
        assert full[3] == "x_1_1"
        assert full[-1] == "x_7_4"

    def test_error_columns(self, benchmark_trajectory, tmp_path: Path):
        """Test one row per recorded sample."""
        path = write_trajectory_csv(benchmark_trajectory, tmp_path / "run" / "traj.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "t,E_1,E_2"
        assert len(lines) == 202
        columns = read_csv_columns(path)
        np.testing.assert_allclose(columns["t"], benchmark_trajectory.times, rtol=1e-8)
        np.testing.assert_allclose(
            columns["E_2"], benchmark_trajectory.error_series[:, 1], rtol=1e-8
        )

    def test_full_state(self, benchmark_trajectory, tmp_path: Path):
        """Test the optional agent state columns."""
        path = write_trajectory_csv(benchmark_trajectory, tmp_path / "full.csv", True)
        columns = read_csv_columns(path)
        assert len(columns) == 31
        np.testing.assert_allclose(
            columns["x_3_2"], benchmark_trajectory.agent_states[:, 2, 1], rtol=1e-8, atol=1e-12
        )

    def test_nine_significant_digits(self, benchmark_trajectory, tmp_path: Path):
        """Test the number format."""
        path = write_trajectory_csv(benchmark_trajectory, tmp_path / "t.csv")
        second = path.read_text(encoding="utf-8").splitlines()[2].split(",")
        assert second[0] == "0.05"
        assert second[1] == f"{benchmark_trajectory.error_series[1, 0]:.9g}"


class TestGainFile:
    """Test gain set persistence."""

    def test_round_trip(self, benchmark_gains, tmp_path: Path):
        """Test that a written gain set reads back to 12 digits."""
        path = write_gain_file(benchmark_gains, tmp_path / "gains.yaml")
        loaded = read_gain_file(path)
        np.testing.assert_allclose(loaded.P, benchmark_gains.P, rtol=1e-11)
        np.testing.assert_allclose(loaded.K, benchmark_gains.K, rtol=1e-11)
        assert loaded.xi == pytest.approx(benchmark_gains.xi, rel=1e-11)
        assert loaded.Xi is None
        assert loaded.thresholds is None
        np.testing.assert_array_equal(loaded.weight, np.diag([100.0, 1.0, 1.0, 1.0]))

    def test_rewrite_is_identical(self, benchmark_gains, tmp_path: Path):
        """Test that reading and writing again changes nothing."""
        first = write_gain_file(benchmark_gains, tmp_path / "a.yaml")
        second = write_gain_file(read_gain_file(first), tmp_path / "b.yaml")
        assert first.read_bytes() == second.read_bytes()

    def test_coupling_certificate_fields(self, benchmark_gains):
        """Test that Xi and thresholds are written when present."""
        gains = benchmark_gains.with_coupling(np.array([1.0, 2.0]), np.array([0.25]))
        data = gain_set_to_dict(gains)
        assert data["Xi"] == [1.0, 2.0]
        assert data["thresholds"] == [0.25]
        assert len(data["P"]) == 4

    def test_missing_field(self, tmp_path: Path):
        """Test that P, K and xi are required."""
        path = tmp_path / "gains.yaml"
        path.write_text("P: [[1.0]]\nxi: 1.0\n", encoding="utf-8")
        with pytest.raises(ValidationError) as exc:
            read_gain_file(path)
        assert exc.value.field == "gains.K"

    def test_shape_mismatch(self, tmp_path: Path):
        """Test that K must have as many columns as P."""
        path = tmp_path / "gains.yaml"
        path.write_text("P: [[1.0, 0.0], [0.0, 1.0]]\nK: [[1.0]]\nxi: 1.0\n", encoding="utf-8")
        with pytest.raises(ValidationError) as exc:
            read_gain_file(path)
        assert exc.value.field == "gains.K"

    def test_unreadable(self, tmp_path: Path):
        """Test missing and malformed files."""
        with pytest.raises(ValidationError, match="cannot read"):
            read_gain_file(tmp_path / "missing.yaml")
        path = tmp_path / "list.yaml"
        path.write_text("- 1\n", encoding="utf-8")
        with pytest.raises(ValidationError, match="mapping"):
            read_gain_file(path)


class TestSweepCsv:
    """Test sweep summaries."""

    def test_rows(self, tmp_path: Path):
        """Test formatting of ok and failed rows."""
        nan = float("nan")
        rows = [
            SweepRow("epsilon", 0.01, 1.5e-4, 0.9, 0.99, True),
            SweepRow("epsilon", 0.001, nan, nan, nan, False, "failed: sim.dt: too large"),
        ]
        path = write_sweep_csv(rows, tmp_path / "sweep.csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(SWEEP_HEADER)
        assert lines[1] == "epsilon,0.01,0.00015,0.9,0.99,yes,ok"
        assert lines[2] == "epsilon,0.001,nan,nan,nan,no,failed: sim.dt: too large"


def test_write_text(tmp_path: Path):
    """Test that text files end with a newline."""
    path = write_text("Verdict: certified", tmp_path / "out" / "report.txt")
    assert path.read_text(encoding="utf-8") == "Verdict: certified\n"
