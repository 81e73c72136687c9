"""CSV and YAML writers for trajectories, gain sets and sweep summaries."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import yaml

from .core import ValidationError, as_matrix
from .gain_synthesis import GainSet
from .simulator import Trajectory

CSV_DIGITS = 9
GAIN_DIGITS = 12

SWEEP_HEADER = [
    "param",
    "value",
    "final_error_ratio",
    "decay_rate",
    "r_squared",
    "certified",
    "status",
]


def _fmt(value: float, digits: int = CSV_DIGITS) -> str:
    return f"{value:.{digits}g}"


def _round(value: float) -> float:
    return float(f"{value:.{GAIN_DIGITS}g}")


def trajectory_header(p: int, N: int = 0, n: int = 0, full_state: bool = False) -> List[str]:
    """``t,E_1..E_p`` plus ``x_<i>_<k>`` (1-based) columns when ``full_state``."""
    header = ["t"] + [f"E_{ell + 1}" for ell in range(p)]
    if full_state:
        header += [f"x_{i + 1}_{k + 1}" for i in range(N) for k in range(n)]
    return header


def write_trajectory_csv(traj: Trajectory, path: Path, full_state: bool = False) -> Path:
    """
    Write the recorded error series (and optionally every agent state).

    Args:
        traj: Simulated trajectory
        path: Output CSV path
        full_state: Append one column per agent state component

    Returns:
        The written path
    """
    K, N, n = traj.agent_states.shape
    p = traj.error_series.shape[1]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(trajectory_header(p, N, n, full_state))
        for k in range(K):
            row = [_fmt(traj.times[k])] + [_fmt(e) for e in traj.error_series[k]]
            if full_state:
                row += [_fmt(x) for x in traj.agent_states[k].ravel()]
            writer.writerow(row)
    return path


def _matrix_rows(matrix: np.ndarray) -> List[List[float]]:
    return [[_round(x) for x in row] for row in np.atleast_2d(matrix)]


def gain_set_to_dict(gains: GainSet) -> Dict[str, Any]:
    data: Dict[str, Any] = {
        "P": _matrix_rows(gains.P),
        "K": _matrix_rows(gains.K),
        "xi": _round(gains.xi),
        "Xi": [_round(x) for x in gains.Xi] if gains.Xi is not None else None,
        "thresholds": (
            [_round(x) for x in gains.thresholds] if gains.thresholds is not None else None
        ),
        "residual": _round(gains.residual),
        "literal_residual": _round(gains.literal_residual),
        "closed_loop_abscissa": _round(gains.closed_loop_abscissa),
    }
    if gains.weight is not None:
        data["weight"] = _matrix_rows(gains.weight)
    return data


def write_gain_file(gains: GainSet, path: Path) -> Path:
    """Write a gain set as YAML with 12 significant digits."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(gain_set_to_dict(gains), f, sort_keys=False, default_flow_style=None)
    return path


def read_gain_file(path: Path) -> GainSet:
    """
    Load a gain set written by ``write_gain_file``.

    Raises:
        ValidationError: If the file is unreadable or lacks P, K or xi
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ValidationError(f"cannot read gain file {path}: {e}")
    if not isinstance(data, dict):
        raise ValidationError(f"gain file {path} must contain a mapping")
    for key in ("P", "K", "xi"):
        if data.get(key) is None:
            raise ValidationError("missing required field", field=f"gains.{key}")

    def optional(key: str) -> Optional[np.ndarray]:
        value = data.get(key)
        return None if value is None else np.asarray(value, dtype=float)

    P = as_matrix(data["P"], "gains.P")
    K = as_matrix(data["K"], "gains.K", (None, P.shape[0]))
    return GainSet(
        P=P,
        K=K,
        xi=float(data["xi"]),
        weight=optional("weight"),
        residual=float(data.get("residual") or 0.0),
        literal_residual=float(data.get("literal_residual") or 0.0),
        closed_loop_abscissa=float(data.get("closed_loop_abscissa", float("nan"))),
        Xi=optional("Xi"),
        thresholds=optional("thresholds"),
    )


def write_sweep_csv(rows: Iterable[Any], path: Path) -> Path:
    """Write sweep rows (objects with the SWEEP_HEADER attributes) in order."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(
                [
                    row.param,
                    _fmt(row.value),
                    _fmt(row.final_error_ratio),
                    _fmt(row.decay_rate),
                    _fmt(row.r_squared),
                    "yes" if row.certified else "no",
                    row.status,
                ]
            )
    return path


def read_csv_columns(path: Path) -> Dict[str, List[float]]:
    """Read a numeric CSV written by this module into columns."""
    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        columns: Dict[str, List[float]] = {name: [] for name in header}
        for row in reader:
            for name, value in zip(header, row):
                columns[name].append(float(value))
    return columns


def write_text(text: str, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")
    return path
