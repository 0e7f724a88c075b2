# app/main.py
"""
Command-line entry point: python -m app.main <command> [options]

Commands: simulate, sweep, decay, compare, reproduce, validate-potentials,
distance. Results go to standard output, logs and errors to standard error.
"""

import argparse
import json
import sys
import time as clock
from pathlib import Path
from typing import Any, Callable, Dict, List, NoReturn, Optional, Sequence

import structlog

from app.config import settings
from app.core.errors import AcceptanceError, ConfigError, StickyLabError
from app.core.logging import configure_logging
from app.schemas.config import SimConfig
from app.schemas.run import CheckResult, ExperimentSummary
from app.services import experiment_service, io_service, potential_service, transport_service
from app.workers import get_worker_status

logger = structlog.get_logger(__name__)


class CliParser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1)."""

    def error(self, message: str) -> NoReturn:
        raise ConfigError(f"{self.prog}: {message}")


def _emit(payload: Any) -> None:
    sys.stdout.write(json.dumps(io_service.to_jsonable(payload), sort_keys=True) + "\n")


def _report_error(payload: Dict[str, Any]) -> None:
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")


def _load(args: argparse.Namespace) -> SimConfig:
    config = io_service.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = experiment_service.derive_config(config, seed=args.seed)
    return config


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    return io_service.resolve_output_dir(args.out, default=Path("runs") / command)


def _finish(summary: ExperimentSummary, out: Path, check: bool) -> int:
    _emit({"out_dir": str(out), "passed": summary.passed, "failed": summary.failed_checks()})
    if check and not summary.passed:
        raise AcceptanceError(
            f"{summary.experiment}: failed checks {', '.join(summary.failed_checks())}",
            failed=summary.failed_checks(),
        )
    return 0


def _log_worker_status(**context: Any) -> Dict[str, int]:
    status = get_worker_status()
    counts = {key: status[key] for key in ("total_workers", "failed_workers")}
    logger.info("Worker status", **context, **counts)
    return counts


def _parse_sigmas(text: str) -> List[Optional[float]]:
    sigmas: List[Optional[float]] = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if item.lower() == "limit":
            sigmas.append(None)
            continue
        try:
            sigmas.append(float(item))
        except ValueError:
            raise ConfigError(f"invalid sigma '{item}'", field="sigmas")
    return sigmas


# =======================
# Commands
# =======================

def cmd_simulate(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, "simulate")
    started = clock.perf_counter()
    run = experiment_service.run_simulation(config)
    final = run.diagnostics[-1]
    summary = ExperimentSummary(
        experiment="simulate",
        data={
            "solver": config.solver.value,
            "final_time": final.time,
            "clusters_rho": final.clusters_rho,
            "clusters_eta": final.clusters_eta,
            "merge_events": final.merge_events,
        },
    )
    io_service.write_bundle(out, config, clock.perf_counter() - started, experiment_service.run_frames(run), summary)
    return _finish(summary, out, check=False)


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, "sweep")
    started = clock.perf_counter()
    result = experiment_service.damping_sweep(config, _parse_sigmas(args.sigmas), args.workers)
    summary = ExperimentSummary(
        experiment="damping_sweep",
        checks=experiment_service.sweep_checks(result),
        data={
            "slope": result.slope,
            "sigmas": result.sigmas,
            "d_values": result.d_values,
            "workers": _log_worker_status(command="sweep"),
        },
    )
    io_service.write_bundle(
        out, config, clock.perf_counter() - started, {"sweep": experiment_service.sweep_frame(result)}, summary
    )
    return _finish(summary, out, args.check)


def cmd_decay(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, "decay")
    started = clock.perf_counter()
    series = experiment_service.newtonian_decay(config, args.horizon)
    summary = ExperimentSummary(
        experiment="newtonian_decay",
        checks=experiment_service.decay_checks(series),
        data={"center": series.center, "initial_norm": series.total_norm(0), "terminal_norm": series.total_norm(-1)},
    )
    io_service.write_bundle(
        out, config, clock.perf_counter() - started, {"decay": experiment_service.decay_frame(series)}, summary
    )
    return _finish(summary, out, args.check)


def cmd_compare(args: argparse.Namespace) -> int:
    config = _load(args)
    out = _out_dir(args, "compare")
    started = clock.perf_counter()
    comparison = experiment_service.compare(config)
    checks: List[CheckResult] = []
    if args.tolerance is not None:
        checks.append(CheckResult(
            name="max_w2_deviation",
            passed=comparison.deviation <= args.tolerance,
            value=comparison.deviation,
            threshold=args.tolerance,
        ))
    summary = ExperimentSummary(experiment="cross_validate", checks=checks, data={"deviation": comparison.deviation})
    frames = {"deviation": comparison.frame()}
    frames.update(experiment_service.run_frames(comparison.eulerian, prefix="eulerian_"))
    frames.update(experiment_service.run_frames(comparison.lagrangian, prefix="lagrangian_"))
    io_service.write_bundle(out, config, clock.perf_counter() - started, frames, summary)
    return _finish(summary, out, args.check)


def cmd_reproduce(args: argparse.Namespace) -> int:
    if args.figure == "all":
        figures = list(experiment_service.FIGURE_IDS)
    else:
        try:
            figures = [int(args.figure)]
        except ValueError:
            raise ConfigError(f"invalid figure id '{args.figure}'", field="figure")
    out = _out_dir(args, "reproduce")
    failed: List[str] = []
    for figure_id in figures:
        summary = experiment_service.reproduce_figure(figure_id, args.seed, out, args.workers)
        _log_worker_status(command="reproduce", figure=figure_id)
        failed.extend(f"fig{figure_id}:{name}" for name in summary.failed_checks())
        _emit({"figure": figure_id, "out_dir": str(out / f"fig{figure_id}"), "passed": summary.passed})
    if args.check and failed:
        raise AcceptanceError(f"failed figure checks {', '.join(failed)}", failed=failed)
    return 0


def cmd_validate_potentials(args: argparse.Namespace) -> int:
    config = io_service.load_config(args.config)
    for slot, spec in config.potentials.slots().items():
        if spec.is_zero:
            continue
        report = potential_service.validate(spec, args.radius, args.samples)
        _emit({"slot": slot, "potential": spec.describe(), "report": report})
    return 0


def cmd_distance(args: argparse.Namespace) -> int:
    mu = io_service.read_measure_csv(args.a)
    nu = io_service.read_measure_csv(args.b)
    sys.stdout.write(repr(transport_service.w2(mu, nu)) + "\n")
    return 0


# =======================
# Parser
# =======================

def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="stickylab", description=f"{settings.app_name} {settings.app_version}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    def add(name: str, handler: Callable[[argparse.Namespace], int], help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, help=help_text)
        sub.set_defaults(handler=handler)
        return sub

    def run_options(sub: argparse.ArgumentParser, check: bool = True) -> None:
        sub.add_argument("--config", required=True, help="INI run configuration")
        sub.add_argument("--out", default=None, help="output directory (STICKYLAB_OUTPUT_DIR wins)")
        sub.add_argument("--seed", type=int, default=None, help="override the config seed")
        if check:
            sub.add_argument("--check", action="store_true", help="exit 3 when an acceptance check fails")

    run_options(add("simulate", cmd_simulate, "run one configuration"), check=False)

    sweep = add("sweep", cmd_sweep, "damping sweep against the first-order limit")
    run_options(sweep)
    sweep.add_argument("--sigmas", required=True, help="comma-separated sigmas; 'limit' adds the first-order row")
    sweep.add_argument("--workers", type=int, default=None)

    decay = add("decay", cmd_decay, "Newtonian decay toward the well center")
    run_options(decay)
    decay.add_argument("--horizon", type=float, default=None)

    compare = add("compare", cmd_compare, "particle vs grid cross-validation")
    run_options(compare)
    compare.add_argument("--tolerance", type=float, default=None, help="max allowed W2 deviation")

    reproduce = add("reproduce", cmd_reproduce, "regenerate a figure bundle")
    reproduce.add_argument("--figure", required=True, help="1..8 or 'all'")
    reproduce.add_argument("--seed", type=int, default=settings.default_seed)
    reproduce.add_argument("--out", default=None)
    reproduce.add_argument("--workers", type=int, default=None)
    reproduce.add_argument("--check", action="store_true")

    validate = add("validate-potentials", cmd_validate_potentials, "admissibility report per potential slot")
    validate.add_argument("--config", required=True)
    validate.add_argument("--radius", type=float, default=None)
    validate.add_argument("--samples", type=int, default=None)

    distance = add("distance", cmd_distance, "W2 distance between two measure CSV files")
    distance.add_argument("--a", required=True)
    distance.add_argument("--b", required=True)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse argv, run the command and map errors to exit codes."""
    configure_logging(settings)
    try:
        args = build_parser().parse_args(argv)
        logger.info("Running command", command=args.command, version=settings.app_version)
        return args.handler(args)
    except StickyLabError as e:
        logger.error("Command failed", error=e.message, error_type=type(e).__name__, code=e.code)
        _report_error(e.to_dict())
        return e.exit_code
    except Exception as e:
        logger.error("Unhandled exception", error=str(e), error_type=type(e).__name__)
        _report_error({"error": "internal_error", "exit_code": 2, "message": str(e)})
        return 2


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
