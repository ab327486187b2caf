"""Self-check suites behind the ``gp-check`` and ``solver-check`` verbs.

Each check compares a numerical core routine against an independent oracle
(explicit matrix inversion, a hand-derived KKT point, a grid search or
finite differences) and records pass/fail with a short detail line.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass, field
from queue import Queue

import numpy as np
import scipy.optimize
from numpy.typing import NDArray

from app.models import ScenarioConfig
from services.gp_service import GpDataset, GpHyper, GpModel, fit, kernel_matrix, predict, predict_batch
from services.nlp_solver import NlpProblem, check_derivatives, solve_sqp
from services.ocp_service import (
    PROBLEM_ACTIVE,
    PROBLEM_KINDS,
    PROBLEM_SINGLE_ACTIVE,
    ControllerContext,
    build_context,
    build_problem,
    hover_inputs,
    initial_guess,
    variance_sum,
)
from services.plant_model import PlantParams, true_residual
from services.qp_solver import QP_OPTIMAL, solve_qp

GP_ORACLE_TOL = 1e-10
FITC_TOL = 1e-6
DERIVATIVE_TOL = 1e-5
DUAL_EFFECT_STEP = 1e-4
DUAL_EFFECT_MIN = 1e-6
BENCHMARK_STATE = (0.3, 0.0)
BENCHMARK_FEATURES = (0.0, 0.2, 0.4, 0.6, 0.8)

CheckFn = Callable[[], tuple[bool, str]]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    elapsed: float = 0.0


@dataclass
class CheckReport:
    suite: str
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(self.results) and all(item.passed for item in self.results)

    @property
    def failures(self) -> list[CheckResult]:
        return [item for item in self.results if not item.passed]

    def summary(self) -> str:
        ok = sum(item.passed for item in self.results)
        return f"{self.suite}: {ok}/{len(self.results)} checks passed"


# --- GP oracles -----------------------------------------------------------------------


def _separated_inputs(rng: np.random.Generator, size: int) -> NDArray:
    start = rng.uniform(-1.0, 0.0)
    return start + np.cumsum(rng.uniform(0.3, 0.6, size))


def explicit_posterior(hyper: GpHyper, z: NDArray, y: NDArray, query: NDArray) -> tuple[NDArray, NDArray]:
    """Posterior mean and variance with a plain matrix inverse of the Gram matrix."""
    gram = kernel_matrix(hyper, z, z) + (hyper.sigma_v2 + hyper.jitter) * np.eye(z.size)
    inverse = np.linalg.inv(gram)
    k = kernel_matrix(hyper, query, z)
    mean = k @ inverse @ y
    variance = hyper.sigma_f2 - np.einsum("ij,jk,ik->i", k, inverse, k)
    return mean, np.maximum(variance, 0.0)


def _check_gp_oracle(rng: np.random.Generator, datasets: int = 50) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(datasets):
        hyper = GpHyper(sigma_f2=rng.uniform(0.1, 1.0), length_scale=rng.uniform(0.2, 0.4))
        z = _separated_inputs(rng, int(rng.integers(1, 6)))
        y = rng.normal(0.0, 0.5, z.size)
        dataset = GpDataset()
        for k, (zi, yi) in enumerate(zip(z, y, strict=True)):
            dataset.append(k, float(zi), float(yi))
        query = rng.uniform(z.min() - 0.5, z.max() + 0.5, 10)
        mean, variance, _, _ = predict_batch(fit(dataset, hyper), query)
        oracle_mean, oracle_var = explicit_posterior(hyper, z, y, query)
        worst = max(worst, float(np.max(np.abs(mean - oracle_mean))), float(np.max(np.abs(variance - oracle_var))))
    return worst <= GP_ORACLE_TOL, f"max deviation {worst:.2e} over {datasets} datasets"


def _check_interpolation() -> tuple[bool, str]:
    dataset = GpDataset()
    dataset.append(0, 0.5, 0.2)
    mean, variance = predict(fit(dataset, GpHyper()), 0.5)
    return abs(mean - 0.2) <= 1e-6 and variance <= 1e-6, f"predict(0.5) = ({mean:.8f}, {variance:.2e})"


def _check_variance_cap(rng: np.random.Generator) -> tuple[bool, str]:
    hyper = GpHyper()
    dataset = GpDataset()
    for k, zi in enumerate(_separated_inputs(rng, 5)):
        dataset.append(k, float(zi), float(rng.normal()))
    _, variance, _, _ = predict_batch(fit(dataset, hyper), np.linspace(-3.0, 5.0, 400))
    ok = bool(np.all(variance >= 0.0) and np.all(variance <= hyper.sigma_f2 + 1e-12))
    return ok, f"variance range [{variance.min():.3g}, {variance.max():.3g}]"


def _check_fitc_collapse(rng: np.random.Generator) -> tuple[bool, str]:
    hyper = GpHyper()
    z = _separated_inputs(rng, 5)
    dataset = GpDataset()
    for k, zi in enumerate(z):
        dataset.append(k, float(zi), float(rng.normal(0.0, 0.5)))
    query = rng.uniform(z.min() - 0.5, z.max() + 0.5, 100)
    exact_mean, exact_var, _, _ = predict_batch(fit(dataset, hyper), query)
    sparse_mean, sparse_var, _, _ = predict_batch(fit(dataset, hyper, mode="sparse", inducing=z), query)
    worst = max(float(np.max(np.abs(exact_mean - sparse_mean))), float(np.max(np.abs(exact_var - sparse_var))))
    return worst <= FITC_TOL, f"max deviation {worst:.2e} at 100 query points"


# --- solver oracles --------------------------------------------------------------------


def _check_qp_examples() -> tuple[bool, str]:
    eye = np.eye(2)
    unconstrained = solve_qp(eye, [-1.0, -1.0])
    bounded = solve_qp(eye, np.zeros(2), A_in=[[-1.0, 0.0]], b_in=[-1.0])
    equality = solve_qp(eye, np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[2.0])
    ok = (
        all(r.status == QP_OPTIMAL for r in (unconstrained, bounded, equality))
        and np.allclose(unconstrained.x, [1.0, 1.0], atol=1e-9)
        and np.allclose(bounded.x, [1.0, 0.0], atol=1e-9)
        and abs(bounded.ineq[0] - 1.0) <= 1e-9
        and np.allclose(equality.x, [1.0, 1.0], atol=1e-9)
    )
    return bool(ok), f"x = {unconstrained.x}, {bounded.x} (z={bounded.ineq[0]:.3g}), {equality.x}"


def _check_sqp_quadratic() -> tuple[bool, str]:
    problem = NlpProblem(n=1, objective=lambda x: ((x[0] - 3.0) ** 2, np.array([2.0 * (x[0] - 3.0)])), name="shifted_square")
    result = solve_sqp(problem, [0.0])
    ok = result.optimal and abs(result.x[0] - 3.0) <= 1e-6 and result.iterations <= 30
    return ok, f"x = {result.x[0]:.8f} after {result.iterations} iterations ({result.status})"


def _check_sqp_equality() -> tuple[bool, str]:
    problem = NlpProblem(
        n=2,
        objective=lambda x: (float(x @ x), 2.0 * x),
        equalities=lambda x: (np.array([x[0] + x[1] - 1.0]), np.array([[1.0, 1.0]])),
        name="circle_line",
    )
    result = solve_sqp(problem, [0.0, 0.0])
    ok = result.optimal and np.allclose(result.x, [0.5, 0.5], atol=1e-6)
    return bool(ok), f"x = {result.x} ({result.status})"


def rosenbrock(x: NDArray) -> tuple[float, NDArray]:
    a, b = 1.0, 100.0
    value = (a - x[0]) ** 2 + b * (x[1] - x[0] ** 2) ** 2
    grad = np.array([-2.0 * (a - x[0]) - 4.0 * b * x[0] * (x[1] - x[0] ** 2), 2.0 * b * (x[1] - x[0] ** 2)])
    return float(value), grad


def rosenbrock_disk_oracle(radius2: float = 1.5, samples: int = 3600) -> float:
    """Best Rosenbrock value on the disk boundary: dense angle grid, then a bounded scalar polish."""
    radius = np.sqrt(radius2)

    def on_circle(theta: float) -> float:
        return rosenbrock(radius * np.array([np.cos(theta), np.sin(theta)]))[0]

    thetas = np.linspace(-np.pi, np.pi, samples, endpoint=False)
    best = thetas[int(np.argmin([on_circle(t) for t in thetas]))]
    step = 2.0 * np.pi / samples
    polished = scipy.optimize.minimize_scalar(on_circle, bounds=(best - step, best + step), method="bounded", options={"xatol": 1e-12})
    return float(min(polished.fun, on_circle(best)))


def _check_sqp_rosenbrock() -> tuple[bool, str]:
    problem = NlpProblem(
        n=2,
        objective=rosenbrock,
        inequalities=lambda x: (np.array([x @ x - 1.5]), 2.0 * x[None, :]),
        name="rosenbrock_disk",
    )
    result = solve_sqp(problem, [0.0, 0.0])
    oracle = rosenbrock_disk_oracle()
    ok = result.optimal and result.kkt_residual <= 1e-6 and abs(result.objective - oracle) <= 1e-4
    return ok, f"f = {result.objective:.8f} vs oracle {oracle:.8f}, kkt {result.kkt_residual:.1e} ({result.status})"


def _check_corrupted_gradient() -> tuple[bool, str]:
    def bad_objective(x: NDArray) -> tuple[float, NDArray]:
        value, grad = rosenbrock(x)
        grad = grad.copy()
        grad[1] += 1.0
        return value, grad

    clean = check_derivatives(NlpProblem(n=2, objective=rosenbrock), [0.3, -0.2])
    corrupted = check_derivatives(NlpProblem(n=2, objective=bad_objective), [0.3, -0.2])
    flagged = [(flag.block, flag.col) for flag in corrupted.flags]
    return clean.ok and flagged == [("objective", 1)], f"clean flags {len(clean.flags)}, corrupted flags {flagged}"


def benchmark_gp(config: ScenarioConfig) -> GpModel:
    """GP fitted on true residuals at a few features spread over the state range."""
    params = PlantParams.from_settings(config.plant)
    dataset = GpDataset()
    for k, z in enumerate(BENCHMARK_FEATURES):
        dataset.append(k, z, true_residual(params, (z, 0.0)))
    return fit(dataset, GpHyper.from_settings(config.gp))


def random_decision(ctx: ControllerContext, gp: GpModel, kind: str, rng: np.random.Generator) -> tuple[NDArray, NlpProblem]:
    """A perturbed hover decision for one OCP variant, with the problem it belongs to."""
    budget = 1.0 if kind in (PROBLEM_ACTIVE, PROBLEM_SINGLE_ACTIVE) else np.inf
    problem = build_problem(kind, ctx, gp, BENCHMARK_STATE, ctx.weights((1.0, 0.0)), j_baseline=0.0, budget=budget)
    layout = problem.layout
    z = initial_guess(problem, BENCHMARK_STATE) + rng.normal(0.0, 0.05, layout.n)
    if layout.sel_slack is not None:
        slack_idx = np.flatnonzero(layout.sel_slack.sum(axis=0))
        z[slack_idx] = np.abs(z[slack_idx])
    if layout.delta is not None:
        z[layout.delta] = rng.uniform(0.0, budget)
    return np.clip(z, layout.lower, layout.upper), problem.nlp


def _check_ocp_derivatives(ctx: ControllerContext, gp: GpModel, rng: np.random.Generator, points: int = 10) -> tuple[bool, str]:
    flagged: dict[str, int] = {}
    checked = 0
    for kind in PROBLEM_KINDS:
        for _ in range(points):
            z, nlp = random_decision(ctx, gp, kind, rng)
            report = check_derivatives(nlp, z, rel_tol=DERIVATIVE_TOL)
            checked += report.checked
            if report.flags:
                flagged[kind] = flagged.get(kind, 0) + len(report.flags)
    return not flagged, f"{checked} entries checked, flagged {flagged or 'none'}"


def _check_dual_effect(ctx: ControllerContext, gp: GpModel) -> tuple[bool, str]:
    u = hover_inputs(ctx, BENCHMARK_STATE)
    step = np.zeros_like(u)
    step[0] = DUAL_EFFECT_STEP
    slope = (variance_sum(ctx, gp, BENCHMARK_STATE, u + step) - variance_sum(ctx, gp, BENCHMARK_STATE, u - step)) / (2 * DUAL_EFFECT_STEP)
    return abs(slope) > DUAL_EFFECT_MIN, f"d(sum var)/du0 = {slope:.3e}"


# --- runner -----------------------------------------------------------------------------


class CheckService:
    def __init__(self, event_queue: Queue | None = None):
        self.event_queue = event_queue

    def _emit(self, event: str, *payload) -> None:
        if self.event_queue is not None:
            self.event_queue.put((event, *payload))

    def _log(self, level: str, msg: str) -> None:
        self._emit("log", level, msg)

    def _run(self, suite: str, checks: list[tuple[str, CheckFn]]) -> CheckReport:
        report = CheckReport(suite)
        for name, check in checks:
            started = time.perf_counter()
            try:
                passed, detail = check()
            except Exception as exc:
                passed, detail = False, f"{type(exc).__name__}: {exc}"
            result = CheckResult(name, bool(passed), detail, time.perf_counter() - started)
            report.results.append(result)
            self._log("INFO" if result.passed else "ERROR", f"[{'ok' if result.passed else 'FAIL'}] {name}: {detail}")
        self._emit("status", report.summary())
        return report

    def run_gp_checks(self, seed: int = 0) -> CheckReport:
        rng = np.random.default_rng(seed)
        return self._run(
            "gp-check",
            [
                ("explicit_inversion", lambda: _check_gp_oracle(rng)),
                ("noise_free_interpolation", _check_interpolation),
                ("variance_cap", lambda: _check_variance_cap(rng)),
                ("fitc_collapse", lambda: _check_fitc_collapse(rng)),
            ],
        )

    def run_solver_checks(self, config: ScenarioConfig | None = None, seed: int = 0) -> CheckReport:
        rng = np.random.default_rng(seed)
        scenario = config or ScenarioConfig()
        cache: dict[str, object] = {}

        def benchmark() -> tuple[ControllerContext, GpModel]:
            if not cache:
                cache["ctx"] = build_context(scenario)
                cache["gp"] = benchmark_gp(scenario)
            return cache["ctx"], cache["gp"]  # type: ignore[return-value]

        return self._run(
            "solver-check",
            [
                ("qp_examples", _check_qp_examples),
                ("sqp_shifted_square", _check_sqp_quadratic),
                ("sqp_equality", _check_sqp_equality),
                ("sqp_rosenbrock_disk", _check_sqp_rosenbrock),
                ("derivative_fault_injection", _check_corrupted_gradient),
                ("ocp_derivatives", lambda: _check_ocp_derivatives(*benchmark(), rng)),
                ("dual_effect", lambda: _check_dual_effect(*benchmark())),
            ],
        )
