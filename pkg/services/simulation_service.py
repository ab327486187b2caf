from __future__ import annotations

import contextlib
import dataclasses
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from queue import Queue

import numpy as np
from numpy.typing import NDArray

from app.constants import (
    CONTROLLER_ACTIVE,
    CONTROLLER_LABELS,
    CONTROLLER_PASSIVE,
    CONTROLLER_RMPC,
    CONTROLLERS,
    EVAL_TIMES,
    LEARNING_CONTROLLERS,
    MEAN_CHECK_GRID_POINTS,
)
from app.errors import AssumptionViolation, InvalidArgument, NumericalFailure, RmpcInfeasible
from app.models import Metrics, ScenarioConfig, SimLog, SimRecord
from services.gp_service import (
    GpDataset,
    GpHyper,
    GpModel,
    dataset_to_csv,
    fit,
    mean_within_bounds,
    prior_model,
    select_inducing,
    select_inducing_time,
)
from services.hardware_service import HardwareService
from services.learning_ledger import LearningLedger, excess_cost, update_ledger
from services.ocp_service import (
    FALLBACK_BASELINE,
    FALLBACK_SHIFTED,
    ControllerContext,
    CostWeights,
    OcpSolution,
    baseline_cost,
    build_context,
    single_horizon_baseline,
    solve_active,
    solve_passive,
    solve_rmpc,
    solve_single_horizon_active,
)
from services.plant_model import PlantParams, plant_step, residual_measurement
from services.set_service import BoxSet
from utils.error_classifier import classify_exception


@dataclass
class ControllerState:
    dataset: GpDataset
    gp: GpModel
    ledger: LearningLedger
    previous: OcpSolution | None = None
    baseline: OcpSolution | None = None


@dataclass
class ComparisonResult:
    logs: list[SimLog]
    metrics: list[Metrics]
    host: dict[str, object] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return any(not log.completed for log in self.logs)


def _inducing_inputs(config: ScenarioConfig, state: ControllerState, x: NDArray) -> NDArray | None:
    if config.gp.mode != "sparse":
        return None
    trajectory = state.previous.x_hat[:, 0] if state.previous is not None else np.array([x[0]])
    if config.gp.inducing == "time":
        return select_inducing_time(trajectory, config.gp.inducing_points)
    return select_inducing(trajectory, config.gp.inducing_points, config.gp.length_scale)


def _noise(config: ScenarioConfig, rng: np.random.Generator) -> NDArray | None:
    if config.plant.noise is None:
        return None
    low, high = config.plant.noise
    return np.array([0.0, rng.uniform(low, high)])


class SimulationService:
    def __init__(self, event_queue: Queue | None = None):
        self.queue = event_queue
        self.stop_event = threading.Event()
        self.child_services: list[SimulationService] = []

    def _emit(self, event: str, *payload) -> None:
        if self.queue is not None:
            self.queue.put((event, *payload))

    def _log(self, level: str, msg: str) -> None:
        self._emit("log", level, msg)

    def stop(self) -> None:
        self.stop_event.set()
        for child in list(self.child_services):
            child.stop()

    def _warn_unconverged(self, label: str, k: int, solved: list[OcpSolution]) -> None:
        for part in solved:
            if part.optimal and not part.fallback:
                continue
            applied = {
                FALLBACK_SHIFTED: "the shifted previous plan",
                FALLBACK_BASELINE: "the baseline solution",
            }.get(part.fallback, "the last feasible iterate")
            self._log("WARN", f"{label}: k={k} {part.problem} solve ended {part.status}; using {applied}")

    def _solve_step(
        self,
        controller: str,
        ctx: ControllerContext,
        state: ControllerState,
        x: NDArray,
        weights: CostWeights,
    ) -> tuple[OcpSolution, float, list[OcpSolution]]:
        if controller == CONTROLLER_RMPC:
            solution = solve_rmpc(ctx, x, weights, state.previous)
            return solution, np.nan, [solution]
        if controller == CONTROLLER_PASSIVE:
            solution = solve_passive(ctx, state.gp, x, weights, state.previous)
            return solution, np.nan, [solution]

        if controller == CONTROLLER_ACTIVE:
            j_baseline, baseline = baseline_cost(ctx, state.gp, x, weights, state.baseline, state.previous)
            solve = solve_active
        else:
            baseline = single_horizon_baseline(ctx, state.gp, x, weights, state.baseline)
            j_baseline = baseline.J_perf
            solve = solve_single_horizon_active
        state.baseline = baseline

        j_plus = excess_cost(state.previous, weights, j_baseline)
        try:
            solution = solve(ctx, state.gp, x, weights, state.ledger, j_plus, baseline)
        except AssumptionViolation as exc:
            self._log("WARN", f"{controller}: {exc}; applying the baseline solution")
            solution = dataclasses.replace(baseline, delta=0.0)
        state.ledger = update_ledger(state.ledger, state.previous, j_baseline, weights, solution.delta)
        solved = [baseline] if solution.trace is baseline.trace else [baseline, solution]
        return solution, j_baseline, solved

    def run_closed_loop(
        self,
        config: ScenarioConfig,
        controller: str | None = None,
        context: ControllerContext | None = None,
    ) -> SimLog:
        name = controller or config.sim.controller
        if name not in CONTROLLERS:
            raise InvalidArgument(f"unknown controller: {name}")
        log = SimLog(controller=name)
        x = np.asarray(config.sim.x0, dtype=float).copy()
        log.final_state = tuple(float(v) for v in x)
        n_steps = config.n_steps
        if n_steps == 0:
            return log

        ctx = context or build_context(config)
        params = PlantParams.from_settings(config.plant)
        hyper = GpHyper.from_settings(config.gp)
        learning = name in LEARNING_CONTROLLERS
        state = ControllerState(
            dataset=GpDataset(max_points=config.gp.max_points),
            gp=prior_model(hyper, config.gp.mode),
            ledger=LearningLedger.from_settings(config.learning),
        )
        rng = np.random.default_rng(config.sim.seed)
        ts = config.plant.ts
        residual_lo, residual_hi = float(ctx.W.lower[1]), float(ctx.W.upper[1])
        grid = np.linspace(ctx.X.lower[0], ctx.X.upper[0], MEAN_CHECK_GRID_POINTS)
        label = CONTROLLER_LABELS[name]
        self._log("INFO", f"{label}: {n_steps} steps, horizon {ctx.horizon}")

        for k in range(n_steps):
            if self.stop_event.is_set():
                log.error, log.error_kind = "stopped", "stopped"
                break
            t = k * ts
            x_ref = config.setpoint_at(t)
            weights = ctx.weights(x_ref)
            if learning and k % config.gp.refit_every == 0:
                try:
                    state.gp = fit(state.dataset, hyper, config.gp.mode, _inducing_inputs(config, state, x))
                except NumericalFailure as exc:
                    log.error, log.error_kind = str(exc), "numerical"
                    self._log("ERROR", f"{label}: GP refit failed at k={k}: {exc}")
                    break
            try:
                solution, j_baseline, solved = self._solve_step(name, ctx, state, x, weights)
            except RmpcInfeasible as exc:
                log.error, log.error_kind = str(exc), "infeasible"
                self._log("ERROR", f"{label}: infeasible at k={k}: {exc}")
                break
            except NumericalFailure as exc:
                log.error, log.error_kind = str(exc), "numerical"
                self._log("ERROR", f"{label}: numerical failure at k={k}: {exc}")
                break

            self._warn_unconverged(label, k, solved)
            u = solution.u_applied
            x_next = plant_step(params, x, u, _noise(config, rng), integrator=config.plant.integrator, model=ctx.model)
            if learning:
                state.dataset.append(k, float(x[0]), residual_measurement(ctx.model, x_next, x, u))
            record = SimRecord(
                k=k,
                t=t,
                x1=float(x[0]),
                x2=float(x[1]),
                u=u,
                status=solution.status,
                solve_time=sum(part.solve_time for part in solved),
                J=solution.J_perf,
                J_B=j_baseline,
                delta=solution.delta,
                Y=state.ledger.Y,
                H=solution.H,
                gp_size=len(state.dataset) if learning else 0,
                max_sigma_x=solution.max_sigma_x,
                slack=solution.max_slack,
                mean_in_w=mean_within_bounds(state.gp, residual_lo, residual_hi, grid) if learning else True,
                x_ref=tuple(x_ref),
                contingency_feasible=solution.contingency_feasible,
                terminal_in_set=solution.terminal_in_set,
                budget_c=solution.budget,
            )
            log.records.append(record)
            if config.solver.trace:
                log.trace.extend({"controller": name, "k": k, **row} for part in solved for row in part.trace)
            self._emit("step", name, record)
            if solution.max_slack > 0.0:
                self._log("DEBUG", f"{label}: k={k} performance slack {solution.max_slack:.3g}")
            state.previous = solution
            x = x_next
            log.final_state = tuple(float(v) for v in x)
            log.final_time = (k + 1) * ts

        if learning:
            log.gp_dataset = dataset_to_csv(state.dataset)
        self._log("INFO", f"{label}: finished {len(log.records)}/{n_steps} steps" + (f" ({log.error_kind})" if log.error else ""))
        return log

    def _run_guarded(self, config: ScenarioConfig, controller: str, context: ControllerContext | None) -> SimLog:
        try:
            return self.run_closed_loop(config, controller, context)
        except Exception as exc:  # recorded; remaining runs proceed
            info = classify_exception(exc)
            self._log("ERROR", f"{CONTROLLER_LABELS.get(controller, controller)}: {info.message}")
            return SimLog(controller=controller, error=str(exc), error_kind=info.category)

    def run_comparison(self, config: ScenarioConfig, controllers: tuple[str, ...] = CONTROLLERS) -> ComparisonResult:
        started = time.time()
        try:
            context = build_context(config)
        except Exception as exc:
            info = classify_exception(exc)
            self._log("ERROR", info.message)
            logs = [SimLog(controller=name, error=str(exc), error_kind=info.category) for name in controllers]
            self._emit("done", True)
            return ComparisonResult(logs, [])

        worker_count = max(1, min(config.sim.workers, len(controllers)))
        self._log("INFO", f"Running {len(controllers)} controllers on {worker_count} workers")
        result_queue: Queue[tuple] = Queue()

        def run_child(controller: str) -> SimLog:
            child = SimulationService(result_queue)
            self.child_services.append(child)
            try:
                return child._run_guarded(config, controller, context)
            finally:
                with contextlib.suppress(ValueError):
                    self.child_services.remove(child)

        with ThreadPoolExecutor(max_workers=worker_count, thread_name_prefix="sim-worker") as executor:
            futures = [executor.submit(run_child, name) for name in controllers]
            pending = list(futures)
            while pending:
                if self.stop_event.is_set():
                    for child in list(self.child_services):
                        child.stop()
                while not result_queue.empty():
                    self._emit(*result_queue.get())
                pending = [future for future in pending if not future.done()]
                time.sleep(0.05)
            while not result_queue.empty():
                self._emit(*result_queue.get())
            logs = [future.result() for future in futures]

        metrics = [compute_metrics(log, config) for log in logs if log.records]
        result = ComparisonResult(logs, metrics, HardwareService().host_info())
        self._emit(
            "run_summary",
            {
                "started_at": started,
                "finished_at": time.time(),
                "controllers": list(controllers),
                "failed": [log.controller for log in logs if not log.completed],
                "metrics": [m.as_dict() for m in metrics],
            },
        )
        self._emit("done", result.failed)
        return result


def _samples(log: SimLog) -> list[tuple[float, tuple[float, ...]]]:
    samples = [(record.t, (record.x1, record.x2)) for record in log.records]
    if log.final_state is not None and log.records and log.final_time > log.records[-1].t:
        samples.append((log.final_time, log.final_state))
    return samples


def steady_state_error(log: SimLog, config: ScenarioConfig, t_eval: float) -> float:
    """Relative x1 tracking error [%] at the last sample not after t_eval.

    The reference is the setpoint the controller was tracking when it
    produced that sample, so a setpoint switch at t_eval does not count.
    """
    candidates = [sample for sample in _samples(log) if sample[0] <= t_eval + 1e-9]
    if not candidates:
        return np.nan
    t, state = candidates[-1]
    reference = config.setpoint_at(max(t - config.plant.ts, 0.0))[0]
    if abs(reference) < 1e-12:
        return np.nan
    return abs(state[0] - reference) / abs(reference) * 100.0


def compute_metrics(log: SimLog, config: ScenarioConfig) -> Metrics:
    if not log.records:
        raise InvalidArgument(f"{log.controller}: log is empty")
    box = BoxSet.from_bounds(config.mpc.x_lower, config.mpc.x_upper)
    violation = max(box.violation(state) for _, state in _samples(log))
    solve_ms = np.array([record.solve_time * 1000.0 for record in log.records])
    first, second = EVAL_TIMES
    return Metrics(
        controller=log.controller,
        e_ss_5s_pct=steady_state_error(log, config, first),
        e_ss_10s_pct=steady_state_error(log, config, second),
        max_violation=violation,
        mean_solve_ms=float(np.mean(solve_ms)),
        max_solve_ms=float(np.max(solve_ms)),
        cum_J=float(np.nansum([record.J for record in log.records])),
        cum_Delta=float(np.sum([record.delta for record in log.records])),
    )


def run_closed_loop(config: ScenarioConfig) -> SimLog:
    return SimulationService().run_closed_loop(config)


def run_comparison(config: ScenarioConfig) -> ComparisonResult:
    return SimulationService().run_comparison(config)
