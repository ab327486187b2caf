import json
import math
import tempfile
import unittest
from pathlib import Path

from app.constants import CONTROLLER_ACTIVE, CONTROLLER_RMPC, SIM_LOG_FIELDS
from app.errors import ReportError
from app.models import Metrics, ScenarioConfig, SimLog, SimRecord
from services.report_service import ReportService, emit_report


def _log(controller: str = CONTROLLER_RMPC) -> SimLog:
    log = SimLog(controller=controller)
    for k in range(3):
        log.records.append(
            SimRecord(
                k=k,
                t=0.1 * k,
                x1=0.25 * k,
                x2=0.1,
                u=-0.33,
                status="optimal",
                solve_time=0.004,
                J=12.5 - k,
                J_B=12.0 - k,
                delta=0.5,
                Y=0.25,
                H=-1.5,
                gp_size=k + 1,
                max_sigma_x=0.02,
                slack=0.0,
                mean_in_w=k != 1,
            )
        )
    log.final_state, log.final_time = (0.75, 0.05), 0.30000000000000004
    return log


def _metrics(controller: str = CONTROLLER_RMPC, e5: float = 2.74) -> Metrics:
    return Metrics(controller, e5, 2.5, 0.0, 4.0, 9.0, 120.0, 0.0)


class ReportServiceTest(unittest.TestCase):
    def test_csv_header_and_final_row(self) -> None:
        lines = ReportService.log_to_csv(_log()).splitlines()
        self.assertEqual(lines[0], ",".join(SIM_LOG_FIELDS))
        self.assertEqual(len(lines), 5)
        self.assertIn("final", lines[-1])

    def test_csv_round_trip(self) -> None:
        original = _log(CONTROLLER_ACTIVE)
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / f"run_{CONTROLLER_ACTIVE}.csv"
            path.write_text(ReportService.log_to_csv(original), encoding="utf-8")
            loaded = ReportService.log_from_csv(path)
        self.assertEqual(loaded.controller, CONTROLLER_ACTIVE)
        self.assertEqual(loaded.records, original.records)
        self.assertEqual(loaded.final_state, original.final_state)
        self.assertEqual(loaded.final_time, original.final_time)

    def test_csv_without_final_row_uses_last_record(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "run_rmpc.csv"
            text = ReportService.log_to_csv(_log())
            path.write_text("\n".join(text.splitlines()[:-1]) + "\n", encoding="utf-8")
            loaded = ReportService.log_from_csv(path)
        self.assertEqual(loaded.final_state, (0.5, 0.1))
        self.assertAlmostEqual(loaded.final_time, 0.2)

    def test_csv_with_wrong_header(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            path = Path(tmpdir) / "run_rmpc.csv"
            path.write_text("k,t\n0,0.0\n", encoding="utf-8")
            with self.assertRaises(ReportError):
                ReportService.log_from_csv(path)

    def test_metrics_payload_replaces_nan(self) -> None:
        payload = ReportService.metrics_payload([_metrics(e5=math.nan)], host={"cpu_count": 4})
        self.assertEqual(payload["host"], {"cpu_count": 4})
        self.assertIsNone(payload["results"][0]["e_ss_5s_pct"])
        self.assertEqual(payload["results"][0]["cum_J"], 120.0)
        json.dumps(payload, allow_nan=False)

    def test_metrics_table_uses_labels(self) -> None:
        table = ReportService.metrics_table([_metrics(), _metrics(CONTROLLER_ACTIVE, 0.1)])
        self.assertIn("RMPC", table)
        self.assertIn("Active contingency", table)
        self.assertIn("2.740", table)

    def test_svg_contains_series_and_constraints(self) -> None:
        svg = ReportService.to_svg([_log(), _log(CONTROLLER_ACTIVE)], "x1", ScenarioConfig())
        self.assertTrue(svg.startswith("<svg"))
        self.assertEqual(svg.count('class="series"'), 2)
        self.assertIn('data-value="1.1"', svg)
        self.assertIn('class="setpoint"', svg)

    def test_input_plot_has_no_setpoint(self) -> None:
        svg = ReportService.to_svg([_log()], "u", ScenarioConfig())
        self.assertNotIn('class="setpoint"', svg)
        self.assertIn('data-value="-5"', svg)

    def test_unknown_channel(self) -> None:
        with self.assertRaises(ReportError):
            ReportService.to_svg([_log()], "x3", ScenarioConfig())


class EmitReportTest(unittest.TestCase):
    def test_writes_runs_metrics_and_plots(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir:
            out_dir = Path(tmpdir) / "results"
            written = emit_report([_log()], [_metrics()], out_dir, True, ScenarioConfig())
            names = sorted(path.name for path in written)
            self.assertEqual(names, ["metrics.json", "plot_u.svg", "plot_x1.svg", "plot_x2.svg", "run_rmpc.csv"])
            data = json.loads((out_dir / "metrics.json").read_text(encoding="utf-8"))
            self.assertEqual(data["results"][0]["controller"], CONTROLLER_RMPC)

    def test_trace_files_only_when_requested(self) -> None:
        log = _log()
        log.trace = [{"controller": CONTROLLER_RMPC, "k": 0, "problem": "rmpc", "iter": 1, "f": 1.0}]
        with tempfile.TemporaryDirectory() as tmpdir:
            quiet = emit_report([log], [_metrics()], Path(tmpdir), False, ScenarioConfig())
            self.assertNotIn("trace_rmpc.csv", [path.name for path in quiet])
            traced = emit_report([log], [_metrics()], Path(tmpdir), False, ScenarioConfig(), trace=True)
            self.assertIn("trace_rmpc.csv", [path.name for path in traced])

    def test_learned_dataset_is_written_next_to_the_run(self) -> None:
        log = _log(CONTROLLER_ACTIVE)
        log.gp_dataset = "k,z,y\n0,0.0,0.0\n1,0.01,2.1e-06\n"
        with tempfile.TemporaryDirectory() as tmpdir:
            written = emit_report([_log(), log], [_metrics()], Path(tmpdir), False, ScenarioConfig())
            names = [path.name for path in written]
            self.assertIn(f"gp_dataset_{CONTROLLER_ACTIVE}.csv", names)
            self.assertNotIn(f"gp_dataset_{CONTROLLER_RMPC}.csv", names)
            text = (Path(tmpdir) / f"gp_dataset_{CONTROLLER_ACTIVE}.csv").read_text(encoding="utf-8")
            self.assertEqual(text, log.gp_dataset)

    def test_no_logs(self) -> None:
        with tempfile.TemporaryDirectory() as tmpdir, self.assertRaises(ReportError):
            emit_report([], [], Path(tmpdir), False, ScenarioConfig())


if __name__ == "__main__":
    unittest.main()
