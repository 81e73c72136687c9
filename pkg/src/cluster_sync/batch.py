"""Parameter sweeps: independent simulation runs over an epsilon or coupling grid."""

from __future__ import annotations

import logging
import multiprocessing as mp
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from typing import List, Optional, Sequence

from tqdm import tqdm

from .analysis import EXIT_CERTIFIED, adapted_sim_config, audit_scenario
from .core import ClusterSyncError, ValidationError
from .gain_synthesis import GainSet, synthesize_gain
from .scenario import ClusterScenario
from .simulator import estimate_decay_rate, simulate

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("epsilon", "c")


class BatchProcessingError(ClusterSyncError):
    """Raised when a sweep cannot be scheduled at all."""

    pass


@dataclass(frozen=True)
class SweepRow:
    param: str
    value: float
    final_error_ratio: float
    decay_rate: float
    r_squared: float
    certified: bool
    status: str = "ok"

    @property
    def failed(self) -> bool:
        return self.status != "ok"


def apply_sweep_value(scenario: ClusterScenario, param: str, value: float) -> ClusterScenario:
    """Scenario with ``param`` set to ``value`` (a uniform gain for ``c``)."""
    if param == "epsilon":
        return scenario.with_epsilon(value)
    if param == "c":
        return scenario.with_coupling([value] * scenario.partition.p)
    raise ValidationError(f"unknown sweep parameter '{param}'", field="param")


def sweep_point(
    scenario: ClusterScenario, gains: GainSet, param: str, value: float
) -> SweepRow:
    """
    Audit and simulate one grid point; errors become a failed row.

    Epsilon points below the scenario's own epsilon get a step refined to
    dt <= epsilon * min dwell / 4. A point counts as certified when the
    audit passes and its own run decays.
    """
    try:
        candidate = apply_sweep_value(scenario, param, value)
        report = audit_scenario(candidate, gains)
        config = adapted_sim_config(candidate, value) if param == "epsilon" else None
        traj = simulate(candidate, gains, config)
        horizon = float(traj.times[-1])
        fit = estimate_decay_rate(traj.times, traj.total_error, (0.5 * horizon, horizon))
        return SweepRow(
            param=param,
            value=float(value),
            final_error_ratio=traj.total_final_ratio,
            decay_rate=fit.rate,
            r_squared=fit.r_squared,
            certified=report.exit_code == EXIT_CERTIFIED and fit.rate > 0,
        )
    except ClusterSyncError as e:
        return _failed_row(param, value, str(e))


def _failed_row(param: str, value: float, message: str) -> SweepRow:
    nan = float("nan")
    return SweepRow(
        param=param,
        value=float(value),
        final_error_ratio=nan,
        decay_rate=nan,
        r_squared=nan,
        certified=False,
        status=f"failed: {message}",
    )


def run_sweep(
    scenario: ClusterScenario,
    param: str,
    grid: Sequence[float],
    gains: Optional[GainSet] = None,
    max_workers: int = 4,
    progress_bar: bool = True,
    desc: str = "Sweep",
) -> List[SweepRow]:
    """
    Evaluate every grid point, concurrently when more than one worker is available.

    Args:
        scenario: Base scenario
        param: ``epsilon`` or ``c``
        grid: Positive parameter values
        gains: Gain set shared by every run; synthesized once when None
        max_workers: Upper bound on worker processes
        progress_bar: Show a tqdm progress bar
        desc: Progress bar label

    Returns:
        One row per grid point, in grid order

    Raises:
        ValidationError: On an unknown parameter or an empty/non-positive grid
        BatchProcessingError: If the worker pool cannot be used
    """
    if param not in SWEEP_PARAMS:
        raise ValidationError(f"unknown sweep parameter '{param}'", field="param")
    values = [float(v) for v in grid]
    if not values:
        raise ValidationError("sweep grid is empty", field="grid")
    if any(not v > 0 for v in values):
        raise ValidationError("sweep grid values must be positive", field="grid")

    if gains is None:
        gains = synthesize_gain(scenario.controller_plant, scenario.gain_weight)

    workers = min(max_workers, mp.cpu_count(), len(values))
    if workers <= 1:
        return _run_sequential(scenario, gains, param, values, progress_bar, desc)

    rows: List[Optional[SweepRow]] = [None] * len(values)
    try:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            future_to_index = {
                executor.submit(sweep_point, scenario, gains, param, value): idx
                for idx, value in enumerate(values)
            }
            start_time = time.time()
            with tqdm(
                total=len(values), desc=desc, unit="run", disable=not progress_bar
            ) as pbar:
                for done, future in enumerate(as_completed(future_to_index), start=1):
                    idx = future_to_index[future]
                    try:
                        rows[idx] = future.result()
                    except Exception as e:
                        rows[idx] = _failed_row(param, values[idx], str(e))
                    pbar.update(1)
                    eta = calculate_eta(done, len(values), start_time)
                    if eta:
                        pbar.set_postfix(eta=eta)
    except (OSError, RuntimeError) as e:
        raise BatchProcessingError(f"Failed to run sweep: {e}")

    for row in rows:
        if row is not None and row.failed:
            logger.warning("Sweep point %s=%g %s", param, row.value, row.status)
    return [row for row in rows if row is not None]


def _run_sequential(
    scenario: ClusterScenario,
    gains: GainSet,
    param: str,
    values: List[float],
    progress_bar: bool,
    desc: str,
) -> List[SweepRow]:
    """Evaluate grid points in-process (single worker)."""
    rows = []
    for value in tqdm(values, desc=desc, unit="run", disable=not progress_bar):
        row = sweep_point(scenario, gains, param, value)
        if row.failed:
            logger.warning("Sweep point %s=%g %s", param, value, row.status)
        rows.append(row)
    return rows


def format_time_remaining(seconds: float) -> str:
    """
    Format time remaining in a human-readable format.

    Args:
        seconds: Time in seconds

    Returns:
        Formatted time string
    """
    if seconds < 60:
        return f"{int(seconds)}s"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = int(seconds % 60)
        return f"{minutes}m {secs}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        return f"{hours}h {minutes}m"


def calculate_eta(processed: int, total: int, start_time: float) -> Optional[str]:
    """ETA string for the remaining runs, or None before the first completes."""
    if processed <= 0:
        return None
    elapsed = time.time() - start_time
    if elapsed <= 0:
        return None
    remaining = total - processed
    return format_time_remaining(remaining * elapsed / processed)
