from __future__ import annotations

import argparse
import os
import queue
import sys
import threading
import time
from collections.abc import Callable
from pathlib import Path
from typing import Any, TypeVar

from app.constants import (
    APP_TITLE,
    APP_VERSION,
    CONTROLLER_LABELS,
    CONTROLLERS,
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_USAGE,
    LOG_ENV_VAR,
    LOG_LEVELS,
)
from app.errors import ConfigError, ReportError
from app.models import ScenarioConfig, SimLog
from app.paths import find_config, resolve_output_dir
from app.settings import parse_config, settings_map_to_config, write_config
from services.check_service import CheckReport, CheckService
from services.hardware_service import HardwareService
from services.report_service import ReportService, emit_report
from services.simulation_service import SimulationService, compute_metrics
from utils.error_classifier import classify_exception, exit_code_for_kind
from utils.formatting import format_time

VERBS = ("simulate", "compare", "gp-check", "solver-check", "report")

T = TypeVar("T")


def _log_threshold() -> int:
    level = os.environ.get(LOG_ENV_VAR, "info").strip().upper()
    return LOG_LEVELS.get("WARN" if level == "WARNING" else level, LOG_LEVELS["INFO"])


def _print_event(event: tuple, threshold: int) -> None:
    etype = event[0]
    if etype == "log":
        _, level, message = event
        if LOG_LEVELS.get(level, LOG_LEVELS["INFO"]) >= threshold:
            print(f"[{level}] {message}")
    elif etype == "status":
        _, message = event
        print(message)
    elif etype == "step":
        _, controller, record = event
        if threshold <= LOG_LEVELS["DEBUG"]:
            print(
                f"{controller} k={record.k} t={record.t:.1f} x=({record.x1:.4f}, {record.x2:.4f}) "
                f"u={record.u:.4f} {record.status} {record.solve_time * 1000.0:.1f} ms"
            )
    elif etype == "run_summary":
        _, summary = event
        elapsed = float(summary.get("finished_at", 0.0)) - float(summary.get("started_at", 0.0))
        print(f"summary controllers={len(summary.get('controllers', []))} failed={len(summary.get('failed', []))} time={format_time(elapsed)}")
    elif etype == "done":
        _, failed = event
        print("finished with failures" if failed else "done")


def _drain(events: queue.Queue, threshold: int) -> None:
    try:
        while True:
            _print_event(events.get_nowait(), threshold)
    except queue.Empty:
        pass


def _run_with_events(target: Callable[[], T], events: queue.Queue, threshold: int) -> T:
    """Run ``target`` on a worker thread while printing its events."""
    outcome: dict[str, Any] = {}

    def work() -> None:
        try:
            outcome["value"] = target()
        except BaseException as exc:
            outcome["error"] = exc

    worker = threading.Thread(target=work, name="cli-worker", daemon=True)
    worker.start()
    while worker.is_alive():
        _drain(events, threshold)
        time.sleep(0.05)
    worker.join()
    _drain(events, threshold)
    if "error" in outcome:
        raise outcome["error"]
    return outcome["value"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=APP_TITLE, description="Dual GP-MPC benchmark runner")
    parser.add_argument("verb", choices=VERBS, help="What to run")
    parser.add_argument("-c", "--config", help="Scenario config file (default: the shipped benchmark.cfg)")
    parser.add_argument("-o", "--output-dir", help="Directory for CSV logs, metrics.json and plots")
    parser.add_argument("--controller", choices=CONTROLLERS, help="Controller for 'simulate' (overrides sim.controller)")
    parser.add_argument("--trace", action="store_true", help="Write per-solve SQP iteration logs")
    parser.add_argument("--seed", type=int, help="Random seed (overrides sim.seed)")
    parser.add_argument("--plot", action="store_true", help="Write SVG plots of x1, x2 and u")
    parser.add_argument("--write-config", metavar="PATH", help="Write the effective config to PATH and exit")
    parser.add_argument("--version", action="version", version=f"{APP_TITLE} {APP_VERSION}")
    return parser


def _load_config(args: argparse.Namespace) -> ScenarioConfig:
    path = find_config(args.config)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    config = parse_config(path)
    overrides: dict[str, Any] = {}
    if args.seed is not None:
        overrides["sim.seed"] = args.seed
    if args.controller:
        overrides["sim.controller"] = args.controller
    if args.trace:
        overrides["solver.trace"] = True
    return settings_map_to_config(overrides, defaults=config) if overrides else config


def _report_checks(report: CheckReport) -> int:
    for item in report.failures:
        print(f"FAILED {item.name}: {item.detail}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _finish_runs(logs: list[SimLog], config: ScenarioConfig, out_dir: Path, args: argparse.Namespace, host: dict[str, object]) -> int:
    with_records = [log for log in logs if log.records]
    metrics = [compute_metrics(log, config) for log in with_records]
    if with_records:
        written = emit_report(with_records, metrics, out_dir, args.plot, config, host=host, trace=config.solver.trace)
        print(ReportService.metrics_table(metrics))
        print(f"wrote {len(written)} files to {out_dir}")
    failed = [log for log in logs if not log.completed]
    for log in failed:
        print(f"{CONTROLLER_LABELS.get(log.controller, log.controller)} aborted: {log.error}", file=sys.stderr)
    return exit_code_for_kind(failed[0].error_kind) if failed else EXIT_OK


def _render_report(config: ScenarioConfig, out_dir: Path, plot: bool) -> int:
    paths = sorted(out_dir.glob("run_*.csv"))
    if not paths:
        raise ReportError(f"no run_*.csv files in {out_dir}")
    logs = [ReportService.log_from_csv(path) for path in paths]
    metrics = [compute_metrics(log, config) for log in logs if log.records]
    written = emit_report(logs, metrics, out_dir, plot, config, host=HardwareService().host_info())
    print(ReportService.metrics_table(metrics))
    print(f"wrote {len(written)} files to {out_dir}")
    return EXIT_OK


def _dispatch(args: argparse.Namespace, threshold: int) -> int:
    config = _load_config(args)
    if args.write_config:
        path = write_config(config, Path(args.write_config).expanduser())
        print(f"config written to {path}")
        return EXIT_OK

    events: queue.Queue[tuple] = queue.Queue()
    if args.verb == "gp-check":
        checks = CheckService(events)
        return _report_checks(_run_with_events(lambda: checks.run_gp_checks(seed=config.sim.seed), events, threshold))
    if args.verb == "solver-check":
        checks = CheckService(events)
        return _report_checks(_run_with_events(lambda: checks.run_solver_checks(config, seed=config.sim.seed), events, threshold))

    out_dir = resolve_output_dir(args.output_dir)
    if args.verb == "report":
        return _render_report(config, out_dir, args.plot)

    service = SimulationService(events)
    if args.verb == "simulate":
        log = _run_with_events(lambda: service.run_closed_loop(config), events, threshold)
        return _finish_runs([log], config, out_dir, args, HardwareService().host_info())
    result = _run_with_events(lambda: service.run_comparison(config), events, threshold)
    return _finish_runs(result.logs, config, out_dir, args, result.host)


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return _dispatch(args, _log_threshold())
    except Exception as exc:
        info = classify_exception(exc)
        print(f"error: {info.message}", file=sys.stderr)
        if info.suggestion:
            print(f"hint: {info.suggestion}", file=sys.stderr)
        return info.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
