"""Run report exporter.

Writes per-controller CSV logs, a metrics JSON and static SVG trajectory
plots overlaying all controllers with setpoint and constraint lines.
"""

from __future__ import annotations

import csv
import html
import io
import math
import time
from pathlib import Path
from typing import Any

from app.constants import CONTROLLER_LABELS, METRIC_FIELDS, REFERENCE_SOLVE_S, SIM_LOG_FIELDS
from app.errors import ReportError
from app.models import Metrics, ScenarioConfig, SimLog, SimRecord
from utils.state import json_safe, save_json_file

FINAL_STATUS = "final"
PLOT_CHANNELS = ("x1", "x2", "u")
_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#17becf")
_WIDTH, _HEIGHT, _MARGIN = 640, 360, 56


def _cell(value: object) -> object:
    if isinstance(value, float):
        return repr(value)
    return value


class ReportService:
    """Renders simulation logs, metrics and plots."""

    @staticmethod
    def log_to_csv(log: SimLog) -> str:
        output = io.StringIO()
        writer = csv.writer(output, lineterminator="\n")
        writer.writerow(SIM_LOG_FIELDS)
        for record in log.records:
            row = record.as_row()
            writer.writerow([_cell(row[name]) for name in SIM_LOG_FIELDS])
        if log.final_state is not None and log.records:
            final = {name: "" for name in SIM_LOG_FIELDS}
            final.update(
                k=log.records[-1].k + 1,
                t=repr(log.final_time),
                x1=repr(log.final_state[0]),
                x2=repr(log.final_state[1]),
                status=FINAL_STATUS,
            )
            writer.writerow([final[name] for name in SIM_LOG_FIELDS])
        return output.getvalue()

    @staticmethod
    def log_from_csv(path: Path, controller: str | None = None) -> SimLog:
        name = controller or path.stem.removeprefix("run_")
        log = SimLog(controller=name)
        try:
            with path.open("r", encoding="utf-8", newline="") as fh:
                reader = csv.DictReader(fh)
                if tuple(reader.fieldnames or ()) != SIM_LOG_FIELDS:
                    raise ReportError(f"{path}: unexpected header")
                for row in reader:
                    if row["status"] == FINAL_STATUS:
                        log.final_state = (float(row["x1"]), float(row["x2"]))
                        log.final_time = float(row["t"])
                        continue
                    log.records.append(
                        SimRecord(
                            k=int(row["k"]),
                            t=float(row["t"]),
                            x1=float(row["x1"]),
                            x2=float(row["x2"]),
                            u=float(row["u"]),
                            status=row["status"],
                            solve_time=float(row["solve_time"]),
                            J=float(row["J"]),
                            J_B=float(row["J_B"]),
                            delta=float(row["delta"]),
                            Y=float(row["Y"]),
                            H=float(row["H"]),
                            gp_size=int(row["gp_size"]),
                            max_sigma_x=float(row["max_sigma_x"]),
                            slack=float(row["slack"]),
                            mean_in_w=row["mean_in_w"] == "1",
                        )
                    )
        except (OSError, ValueError, KeyError) as exc:
            raise ReportError(f"{path}: {exc}") from exc
        if log.final_state is None and log.records:
            last = log.records[-1]
            log.final_state, log.final_time = (last.x1, last.x2), last.t
        return log

    @staticmethod
    def trace_to_csv(rows: list[dict[str, Any]]) -> str:
        output = io.StringIO()
        fields = ["controller", "k", "problem", "iter", "f", "violation", "kkt", "alpha", "qp_status", "step_norm"]
        writer = csv.DictWriter(output, fieldnames=fields, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: _cell(value) for key, value in row.items()})
        return output.getvalue()

    @staticmethod
    def metrics_payload(metrics: list[Metrics], *, host: dict[str, Any] | None = None) -> dict[str, Any]:
        return {
            "version": 1,
            "exported_at": time.time(),
            "reference_solve_s": REFERENCE_SOLVE_S,
            "host": host or {},
            "results": [json_safe({name: item.as_dict()[name] for name in METRIC_FIELDS}) for item in metrics],
        }

    @staticmethod
    def metrics_table(metrics: list[Metrics]) -> str:
        header = f"{'controller':<24} {'e_ss 5s %':>10} {'e_ss 10s %':>11} {'max viol':>9} {'mean ms':>9} {'max ms':>9} {'cum J':>11} {'cum Delta':>10}"
        lines = [header, "-" * len(header)]
        for item in metrics:
            lines.append(
                f"{CONTROLLER_LABELS.get(item.controller, item.controller):<24} {item.e_ss_5s_pct:>10.3f} {item.e_ss_10s_pct:>11.3f} "
                f"{item.max_violation:>9.2g} {item.mean_solve_ms:>9.1f} {item.max_solve_ms:>9.1f} {item.cum_J:>11.2f} {item.cum_Delta:>10.3f}"
            )
        return "\n".join(lines)

    @staticmethod
    def to_svg(logs: list[SimLog], channel: str, config: ScenarioConfig) -> str:
        """Static SVG of one channel for all controllers."""
        if channel not in PLOT_CHANNELS:
            raise ReportError(f"unknown plot channel: {channel}")
        series: list[tuple[str, list[tuple[float, float]]]] = []
        for log in logs:
            points = [(record.t, _channel_value(record, channel)) for record in log.records]
            if channel != "u" and log.final_state is not None and log.records:
                points.append((log.final_time, log.final_state[0 if channel == "x1" else 1]))
            series.append((log.controller, points))

        if channel == "u":
            limits = [config.mpc.u_lower[0], config.mpc.u_upper[0]]
        else:
            idx = 0 if channel == "x1" else 1
            limits = [config.mpc.x_lower[idx], config.mpc.x_upper[idx]]
        limits = [value for value in limits if math.isfinite(value)]
        setpoint: list[tuple[float, float]] = []
        if channel != "u":
            idx = 0 if channel == "x1" else 1
            for start, value in config.sim.setpoints:
                if setpoint:
                    setpoint.append((start, setpoint[-1][1]))
                setpoint.append((start, value[idx]))
            setpoint.append((config.sim.duration, setpoint[-1][1]))

        values = [v for _, points in series for _, v in points if math.isfinite(v)] + limits + [v for _, v in setpoint]
        lo, hi = (min(values), max(values)) if values else (0.0, 1.0)
        pad = 0.05 * (hi - lo or 1.0)
        lo, hi = lo - pad, hi + pad
        t_end = max([config.sim.duration] + [t for _, points in series for t, _ in points]) or 1.0

        def sx(t: float) -> float:
            return _MARGIN + (t / t_end) * (_WIDTH - 2 * _MARGIN)

        def sy(v: float) -> float:
            return _HEIGHT - _MARGIN - (v - lo) / (hi - lo) * (_HEIGHT - 2 * _MARGIN)

        parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
            f"<title>{html.escape(channel)}</title>",
            f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
            f'<line x1="{_MARGIN}" y1="{_HEIGHT - _MARGIN}" x2="{_WIDTH - _MARGIN}" y2="{_HEIGHT - _MARGIN}" stroke="#444"/>',
            f'<line x1="{_MARGIN}" y1="{_MARGIN}" x2="{_MARGIN}" y2="{_HEIGHT - _MARGIN}" stroke="#444"/>',
            f'<text x="{_WIDTH / 2:.0f}" y="{_HEIGHT - 16}" text-anchor="middle" font-size="12">t [s]</text>',
            f'<text x="16" y="{_HEIGHT / 2:.0f}" font-size="12" transform="rotate(-90 16 {_HEIGHT / 2:.0f})">{html.escape(channel)}</text>',
            f'<text x="{_MARGIN - 6}" y="{sy(hi - pad) + 4:.1f}" text-anchor="end" font-size="10">{hi - pad:g}</text>',
            f'<text x="{_MARGIN - 6}" y="{sy(lo + pad) + 4:.1f}" text-anchor="end" font-size="10">{lo + pad:g}</text>',
        ]
        for value in limits:
            parts.append(
                f'<line class="constraint" data-value="{value:g}" x1="{sx(0.0):.1f}" y1="{sy(value):.1f}" '
                f'x2="{sx(t_end):.1f}" y2="{sy(value):.1f}" stroke="red" stroke-dasharray="6 4"/>'
            )
        if setpoint:
            path = " ".join(f"{sx(t):.1f},{sy(v):.1f}" for t, v in setpoint)
            parts.append(f'<polyline class="setpoint" points="{path}" fill="none" stroke="black" stroke-dasharray="4 3"/>')
        for index, (name, points) in enumerate(series):
            color = _COLORS[index % len(_COLORS)]
            path = " ".join(f"{sx(t):.1f},{sy(v):.1f}" for t, v in points if math.isfinite(v))
            parts.append(f'<polyline class="series" data-controller="{html.escape(name)}" points="{path}" fill="none" stroke="{color}"/>')
            label = html.escape(CONTROLLER_LABELS.get(name, name))
            y = _MARGIN + 14 * index
            parts.append(f'<text x="{_WIDTH - _MARGIN - 4}" y="{y}" text-anchor="end" font-size="11" fill="{color}">{label}</text>')
        parts.append("</svg>")
        return "\n".join(parts) + "\n"


def _channel_value(record: SimRecord, channel: str) -> float:
    return {"x1": record.x1, "x2": record.x2, "u": record.u}[channel]


def _write_text(path: Path, content: str) -> Path:
    try:
        path.write_text(content, encoding="utf-8")
    except OSError as exc:
        raise ReportError(f"cannot write {path}: {exc}") from exc
    return path


def emit_report(
    logs: list[SimLog],
    metrics: list[Metrics],
    out_dir: Path,
    plot: bool,
    config: ScenarioConfig,
    *,
    host: dict[str, Any] | None = None,
    trace: bool = False,
) -> list[Path]:
    """Write run CSVs, learned GP datasets, metrics.json and (optionally) SVG plots; returns written paths."""
    if not logs:
        raise ReportError("no simulation logs to report")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create output directory {out_dir}: {exc}") from exc

    written: list[Path] = []
    for log in logs:
        written.append(_write_text(out_dir / f"run_{log.controller}.csv", ReportService.log_to_csv(log)))
        if trace and log.trace:
            written.append(_write_text(out_dir / f"trace_{log.controller}.csv", ReportService.trace_to_csv(log.trace)))
        if log.gp_dataset:
            written.append(_write_text(out_dir / f"gp_dataset_{log.controller}.csv", log.gp_dataset))

    metrics_path = out_dir / "metrics.json"
    try:
        save_json_file(metrics_path, ReportService.metrics_payload(metrics, host=host))
    except OSError as exc:
        raise ReportError(f"cannot write {metrics_path}: {exc}") from exc
    written.append(metrics_path)

    if plot:
        for channel in PLOT_CHANNELS:
            written.append(_write_text(out_dir / f"plot_{channel}.svg", ReportService.to_svg(logs, channel, config)))
    return written
