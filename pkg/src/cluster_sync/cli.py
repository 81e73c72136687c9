"""Command-line interface for Cluster Sync Lab."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, Optional

from colorama import Fore, Style
from colorama import init as color_init

from .analysis import EXIT_NOT_STABILIZABLE, Verdict, audit_scenario, coupling_certificate
from .batch import SWEEP_PARAMS, run_sweep
from .config import get_config_value, load_config
from .core import (
    CertificateError,
    ClusterSyncError,
    DivergenceError,
    NotStabilizableError,
    format_error_message,
)
from .export import read_gain_file, write_gain_file, write_sweep_csv, write_trajectory_csv
from .gain_synthesis import (
    GainSet,
    format_eigenvalue,
    pbh_stabilizability_check,
    synthesize_gain,
)
from .logging import OperationLogger, get_logger, log_operation_summary
from .repro import EXIT_DIVERGED, example_names, expand_name, run_example
from .scenario import ClusterScenario, load_scenario
from .simulator import simulate

color_init()

_VERDICT_COLORS = {
    Verdict.CERTIFIED: Fore.GREEN,
    Verdict.UNCERTIFIED: Fore.YELLOW,
    Verdict.NECESSARILY_FAILS: Fore.RED,
}


def handle_error(error: Exception, context: str = "") -> int:
    """
    Handle errors with appropriate user messaging.

    Args:
        error: The exception that occurred
        context: Additional context about where the error occurred

    Returns:
        Exit code (20 for divergence, 10 for an unstabilizable plant, 1 otherwise)
    """
    try:
        if isinstance(error, KeyboardInterrupt):
            print(f"{Fore.YELLOW}Operation interrupted by user{Style.RESET_ALL}")
        elif isinstance(error, DivergenceError):
            print(
                f"{Fore.RED}Error: simulation diverged; last finite time "
                f"{error.last_time:.6g}{Style.RESET_ALL}"
            )
        elif isinstance(error, ClusterSyncError):
            print(f"{Fore.RED}{format_error_message(error, context)}{Style.RESET_ALL}")
            context = ""
        else:
            print(f"{Fore.RED}Unexpected error: {error}{Style.RESET_ALL}")

        if context:
            print(f"{Fore.YELLOW}Context: {context}{Style.RESET_ALL}")
    except UnicodeEncodeError:
        # Fallback for console encoding issues
        print(f"Error: {error}")
        if context:
            print(f"Context: {context}")

    if isinstance(error, DivergenceError):
        return EXIT_DIVERGED
    if isinstance(error, NotStabilizableError):
        return EXIT_NOT_STABILIZABLE
    return 1


def _setup(args: argparse.Namespace) -> tuple[Dict[str, Any], OperationLogger]:
    config = load_config(Path(args.config) if getattr(args, "config", None) else None)
    if getattr(args, "verbose", False):
        level: Optional[str] = "DEBUG"
    elif getattr(args, "quiet", False):
        level = "WARNING"
    else:
        level = None
    log_file = getattr(args, "log_file", None) or get_config_value(config, "log_file")
    if level is None and get_config_value(config, "log_level") not in (None, "INFO"):
        level = get_config_value(config, "log_level")
    logger = get_logger(Path(log_file) if log_file else None, level)
    return config, logger


def _load(args: argparse.Namespace) -> ClusterScenario:
    scenario = load_scenario(Path(args.scenario))
    if getattr(args, "epsilon", None) is not None:
        scenario = scenario.with_epsilon(args.epsilon)
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_sim(seed=args.seed)
    return scenario


def _design(scenario: ClusterScenario, config: Dict[str, Any]) -> GainSet:
    return synthesize_gain(
        scenario.controller_plant,
        scenario.gain_weight,
        tol=get_config_value(config, "pbh_tol", 1e-8),
    )


def cmd_analyze(args: argparse.Namespace) -> int:
    """Analyze command implementation."""
    try:
        config, logger = _setup(args)
        scenario = _load(args)
        logger.log_operation_start("analyze", {"scenario": args.scenario})

        try:
            gains: Optional[GainSet] = _design(scenario, config)
        except ClusterSyncError as e:
            logger.log_debug(f"No gain for contraction check: {e}")
            gains = None

        report = audit_scenario(
            scenario,
            gains,
            pbh_tol=get_config_value(config, "pbh_tol", 1e-8),
            balance_tol=get_config_value(config, "balance_tol", 1e-9),
            edge_tol=get_config_value(config, "edge_tol", 1e-6),
            xi_tol=get_config_value(config, "xi_tol", 1e-9),
            contraction_tol=get_config_value(config, "contraction_tol", 1e-9),
            samples=int(get_config_value(config, "average_samples", 64)),
            with_epsilon_guidance=args.epsilon_guidance,
        )

        if args.format == "kv":
            print(report.to_kv())
        else:
            color = _VERDICT_COLORS[report.verdict]
            body, _, verdict = report.to_text().rpartition("\nVerdict: ")
            print(body)
            print(f"{color}Verdict: {verdict}{Style.RESET_ALL}")

        logger.log_operation_end(
            "analyze", report.exit_code == 0, {"verdict": report.verdict.value}
        )
        return report.exit_code
    except Exception as e:
        return handle_error(e, f"analyzing {args.scenario}")


def cmd_synthesize(args: argparse.Namespace) -> int:
    """Synthesize-gains command implementation."""
    try:
        config, logger = _setup(args)
        scenario = _load(args)
        plant = scenario.controller_plant
        logger.log_operation_start("synthesize-gains", {"scenario": args.scenario})

        pbh = pbh_stabilizability_check(plant, get_config_value(config, "pbh_tol", 1e-8))
        if not pbh.is_stabilizable:
            mode = pbh.offending
            assert mode is not None
            print(
                f"{Fore.RED}Not stabilizable: uncontrollable mode "
                f"lambda={format_eigenvalue(mode.eigenvalue)}{Style.RESET_ALL}"
            )
            logger.log_operation_end("synthesize-gains", False, {"verdict": pbh.verdict.value})
            return EXIT_NOT_STABILIZABLE

        gains = _design(scenario, config)
        try:
            Xi, thresholds = coupling_certificate(
                scenario, get_config_value(config, "xi_tol", 1e-9)
            )
            gains = gains.with_coupling(Xi, thresholds.values)
        except CertificateError as e:
            print(f"{Fore.YELLOW}Warning: no coupling certificate ({e}){Style.RESET_ALL}")

        out = write_gain_file(gains, Path(args.out))
        print(f"{Fore.GREEN}✓ Gains written to {out}{Style.RESET_ALL}")
        print(f"  Riccati residual: {gains.residual:.3g}")
        print(f"  xi: {gains.xi:.6g}")
        if gains.thresholds is not None:
            print("  thresholds: " + ", ".join(f"{c:.6g}" for c in gains.thresholds))
        logger.log_operation_end("synthesize-gains", True, {"out": str(out)})
        return 0
    except Exception as e:
        return handle_error(e, f"synthesizing gains for {args.scenario}")


def cmd_simulate(args: argparse.Namespace) -> int:
    """Simulate command implementation."""
    try:
        config, logger = _setup(args)
        scenario = _load(args)
        scenario = scenario.with_sim(
            divergence_limit=float(get_config_value(config, "divergence_limit", 1e12))
        )
        gains = read_gain_file(Path(args.gains)) if args.gains else _design(scenario, config)
        logger.log_operation_start(
            "simulate", {"scenario": args.scenario, "epsilon": scenario.signal.epsilon}
        )

        traj = simulate(scenario, gains)
        out = write_trajectory_csv(traj, Path(args.out), full_state=args.full_state)

        ratios = traj.final_ratio()
        print(f"{Fore.GREEN}✓ Trajectory written to {out} ({traj.times.size} rows){Style.RESET_ALL}")
        for ell, ratio in enumerate(ratios):
            print(f"  E_{ell + 1}(T)/E_{ell + 1}(0) = {ratio:.3g}")
        logger.log_operation_end(
            "simulate", True, {"out": str(out), "final_ratios": ratios.tolist()}
        )
        return 0
    except Exception as e:
        return handle_error(e, f"simulating {args.scenario}")


def cmd_sweep(args: argparse.Namespace) -> int:
    """Sweep command implementation."""
    try:
        config, logger = _setup(args)
        scenario = _load(args)
        logger.log_operation_start(
            "sweep", {"scenario": args.scenario, "param": args.param, "grid": args.grid}
        )
        workers = args.workers or int(get_config_value(config, "max_workers", 4))
        progress = bool(get_config_value(config, "progress_bar", True)) and not args.no_progress

        gains = read_gain_file(Path(args.gains)) if args.gains else None
        rows = run_sweep(
            scenario,
            args.param,
            args.grid,
            gains=gains,
            max_workers=workers,
            progress_bar=progress,
            desc=f"Sweep {args.param}",
        )
        out = write_sweep_csv(rows, Path(args.out))

        failed = [row for row in rows if row.failed]
        for row in rows:
            mark = f"{Fore.RED}✗" if row.failed else f"{Fore.GREEN}✓"
            print(
                f"{mark}{Style.RESET_ALL} {row.param}={row.value:g}: "
                f"ratio {row.final_error_ratio:.3g}, rate {row.decay_rate:.3g}"
                f"{'' if not row.failed else ' (' + row.status + ')'}"
            )
        print(f"{Fore.CYAN}Sweep summary written to {out}{Style.RESET_ALL}")
        log_operation_summary(
            logger,
            "sweep",
            {
                "total": len(rows),
                "successful": len(rows) - len(failed),
                "failed": len(failed),
                "errors": [row.status for row in failed],
            },
        )
        return 0
    except Exception as e:
        return handle_error(e, f"sweeping {args.scenario}")


def cmd_repro_example(args: argparse.Namespace) -> int:
    """Repro-example command implementation."""
    try:
        _, logger = _setup(args)
        names = expand_name(args.name)
        out_root = Path(args.out) if args.out else Path("repro_out") / args.name
        exit_code = 0
        for name in names:
            out_dir = out_root / name if len(names) > 1 else out_root
            logger.log_operation_start("repro-example", {"name": name, "out": str(out_dir)})
            result = run_example(name, out_dir, logger)
            report = result.report
            if report is not None:
                color = _VERDICT_COLORS[report.verdict]
                print(
                    f"{color}{name}: {report.verdict.value} (exit {report.exit_code})"
                    f"{Style.RESET_ALL}"
                )
                for reason in report.reasons:
                    print(f"  - {reason}")
            if result.trajectory is not None:
                print(f"  E(T)/E(0) = {result.trajectory.total_final_ratio:.3g}")
            if result.error:
                print(f"{Fore.RED}  {result.error}{Style.RESET_ALL}")
            print(f"  bundle: {out_dir}")
            logger.log_operation_end(
                "repro-example", result.exit_code == 0, {"exit_code": result.exit_code}
            )
            exit_code = max(exit_code, result.exit_code)
        return exit_code
    except Exception as e:
        return handle_error(e, f"reproducing {args.name}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="csync", description="Cluster synchronization lab for pinned switching networks"
    )

    # Global options
    p.add_argument("--verbose", "-v", action="store_true", help="Verbose output")
    p.add_argument(
        "--quiet", "-q", action="store_true", help="Quiet output (warnings only)"
    )
    p.add_argument("--config", help="Path to configuration file (.csync_config.yaml)")
    p.add_argument("--log-file", help="Also write log records to this file")

    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="Audit a scenario against the synchronization conditions")
    pa.add_argument("scenario", help="Scenario YAML file")
    pa.add_argument("--epsilon", type=float, help="Override the time-scale ratio")
    pa.add_argument(
        "--format", choices=["text", "kv"], default="text", help="Report format"
    )
    pa.add_argument(
        "--epsilon-guidance",
        action="store_true",
        help="Bisect epsilon by simulation (empirical); exit 14 if the current epsilon does not decay",
    )
    pa.set_defaults(func=cmd_analyze)

    pg = sub.add_parser("synthesize-gains", help="Design K = B^T P and coupling thresholds")
    pg.add_argument("scenario", help="Scenario YAML file")
    pg.add_argument("--out", required=True, help="Output gain file (YAML)")
    pg.set_defaults(func=cmd_synthesize)

    ps = sub.add_parser("simulate", help="Simulate the closed loop and write a CSV")
    ps.add_argument("scenario", help="Scenario YAML file")
    ps.add_argument("--gains", help="Gain file from synthesize-gains (designed if omitted)")
    ps.add_argument("--out", required=True, help="Output CSV path")
    ps.add_argument(
        "--full-state", action="store_true", help="Include every agent state column"
    )
    ps.add_argument("--seed", type=int, help="Override the random seed")
    ps.add_argument("--epsilon", type=float, help="Override the time-scale ratio")
    ps.set_defaults(func=cmd_simulate)

    pw = sub.add_parser("sweep", help="Sweep epsilon or the cluster coupling")
    pw.add_argument("scenario", help="Scenario YAML file")
    pw.add_argument("--param", choices=SWEEP_PARAMS, required=True, help="Swept parameter")
    pw.add_argument(
        "--grid", type=float, nargs="+", required=True, help="Parameter values"
    )
    pw.add_argument("--out", required=True, help="Output summary CSV")
    pw.add_argument("--gains", help="Gain file shared by every run")
    pw.add_argument("--workers", type=int, help="Worker processes (config max_workers)")
    pw.add_argument("--seed", type=int, help="Override the random seed")
    pw.add_argument("--no-progress", action="store_true", help="Hide the progress bar")
    pw.set_defaults(func=cmd_sweep)

    pr = sub.add_parser("repro-example", help="Materialize and run an example scenario")
    pr.add_argument("name", choices=example_names(), help="Example name")
    pr.add_argument("--out", help="Output directory (default repro_out/<name>)")
    pr.set_defaults(func=cmd_repro_example)

    return p


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the CLI."""
    try:
        parser = build_parser()
        raw_args = argv if argv is not None else sys.argv[1:]
        if any(flag in raw_args for flag in ("-h", "--help")) and len(raw_args) == 1:
            parser.print_help()
            return 0
        try:
            args = parser.parse_args(argv)
        except SystemExit as se:
            # Return non-zero exit code instead of exiting the process
            return 0 if (se.code is None or se.code == 0) else int(se.code)

        return int(args.func(args))
    except KeyboardInterrupt:
        print(f"\n{Fore.YELLOW}Operation cancelled by user{Style.RESET_ALL}")
        return 130
    except Exception as e:
        return handle_error(e, "parsing command line arguments")


if __name__ == "__main__":
    raise SystemExit(main())
