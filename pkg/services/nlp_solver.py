"""Sequential quadratic programming for smooth nonlinear programs.

    minimize f(x)  s.t.  c_eq(x) = 0,  c_in(x) <= 0,  lower <= x <= upper
"""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.errors import InvalidArgument
from services.qp_solver import QP_ELASTIC, QP_INFEASIBLE, QP_OPTIMAL, solve_qp

STATUS_OPTIMAL = "optimal"
STATUS_MAX_ITER = "max_iter"
STATUS_INFEASIBLE = "infeasible"
STATUS_NUMERICAL = "numerical_failure"

ARMIJO = 1e-4
MIN_STEP = 1e-10

ObjectiveFn = Callable[[NDArray], tuple[float, NDArray]]
ConstraintFn = Callable[[NDArray], tuple[NDArray, NDArray]]


@dataclass
class NlpProblem:
    n: int
    objective: ObjectiveFn
    equalities: ConstraintFn | None = None
    inequalities: ConstraintFn | None = None
    lower: NDArray | None = None
    upper: NDArray | None = None
    hessian: Callable[[NDArray], NDArray] | None = None
    # known PSD part of the Lagrangian Hessian given the equality multipliers;
    # damped BFGS tracks the rest
    curvature: Callable[[NDArray, NDArray], NDArray] | None = None
    name: str = ""

    def bounds(self) -> tuple[NDArray, NDArray]:
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float)
        return lo, hi


@dataclass
class SqpOptions:
    max_iter: int = 200
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    elastic_penalty: float = 1e6
    penalty_init: float = 1.0
    verify_derivatives: bool = False
    trace: bool = False


@dataclass
class NlpSolution:
    x: NDArray
    objective: float
    kkt_residual: float
    status: str
    iterations: int
    wall_time: float
    violation: float = 0.0
    eq_multipliers: NDArray = field(default_factory=lambda: np.zeros(0))
    ineq_multipliers: NDArray = field(default_factory=lambda: np.zeros(0))
    trace: list[dict[str, object]] = field(default_factory=list)
    derivative_flags: list[DerivativeFlag] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL


@dataclass(frozen=True)
class DerivativeFlag:
    block: str
    row: int
    col: int
    supplied: float
    numeric: float
    error: float


@dataclass
class DerivativeReport:
    flags: list[DerivativeFlag] = field(default_factory=list)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.flags


@dataclass
class _Point:
    f: float
    grad: NDArray
    ce: NDArray
    je: NDArray
    ci: NDArray
    ji: NDArray


class _NonFinite(Exception):
    pass


def _empty_constraints(n: int) -> tuple[NDArray, NDArray]:
    return np.zeros(0), np.zeros((0, n))


def _evaluate(problem: NlpProblem, x: NDArray) -> _Point:
    f, grad = problem.objective(x)
    ce, je = problem.equalities(x) if problem.equalities else _empty_constraints(problem.n)
    ci, ji = problem.inequalities(x) if problem.inequalities else _empty_constraints(problem.n)
    point = _Point(
        float(f),
        np.asarray(grad, dtype=float),
        np.atleast_1d(np.asarray(ce, dtype=float)),
        np.asarray(je, dtype=float).reshape(-1, problem.n),
        np.atleast_1d(np.asarray(ci, dtype=float)),
        np.asarray(ji, dtype=float).reshape(-1, problem.n),
    )
    values = (np.array([point.f]), point.grad, point.ce, point.je, point.ci, point.ji)
    if not all(np.all(np.isfinite(v)) for v in values):
        raise _NonFinite
    return point


def _violation(point: _Point) -> float:
    return float(np.sum(np.abs(point.ce)) + np.sum(np.maximum(point.ci, 0.0)))


def _max_violation(point: _Point) -> float:
    parts = [0.0]
    if point.ce.size:
        parts.append(float(np.max(np.abs(point.ce))))
    if point.ci.size:
        parts.append(float(np.max(point.ci)))
    return max(parts)


def _kkt_residual(point: _Point, y: NDArray, z: NDArray, z_lower: NDArray, z_upper: NDArray) -> float:
    stationarity = point.grad + point.je.T @ y + point.ji.T @ z - z_lower + z_upper
    scale = max(1.0, float(np.max(np.abs(point.grad))) if point.grad.size else 1.0)
    residual = float(np.max(np.abs(stationarity))) / scale if stationarity.size else 0.0
    if z.size:
        residual = max(residual, float(np.max(np.abs(z * np.minimum(point.ci, 0.0)))) / scale)
    return residual


def damped_bfgs_update(B: NDArray, s: NDArray, y: NDArray) -> NDArray:
    """Powell-damped BFGS update; falls back to identity on lost curvature."""
    bs = B @ s
    sbs = float(s @ bs)
    if sbs <= 1e-16:
        return B
    sy = float(s @ y)
    if sy < 0.2 * sbs:
        theta = 0.8 * sbs / (sbs - sy)
        y = theta * y + (1.0 - theta) * bs
        sy = float(s @ y)
    if sy <= 1e-16:
        return np.eye(B.shape[0])
    return B - np.outer(bs, bs) / sbs + np.outer(y, y) / sy


def solve_sqp(problem: NlpProblem, x0: ArrayLike, options: SqpOptions | None = None) -> NlpSolution:
    opts = options or SqpOptions()
    started = time.perf_counter()
    lo, hi = problem.bounds()
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (problem.n,):
        raise InvalidArgument(f"initial guess has shape {x.shape}, expected ({problem.n},)")
    x = np.clip(x, lo, hi)

    flags: list[DerivativeFlag] = []
    if opts.verify_derivatives:
        flags = check_derivatives(problem, x).flags

    trace: list[dict[str, object]] = []

    def finish(status: str, point: _Point | None, kkt: float, iterations: int, y=None, z=None) -> NlpSolution:
        return NlpSolution(
            x=x,
            objective=point.f if point else np.nan,
            kkt_residual=kkt,
            status=status,
            iterations=iterations,
            wall_time=time.perf_counter() - started,
            violation=_max_violation(point) if point else np.inf,
            eq_multipliers=np.zeros(0) if y is None else y,
            ineq_multipliers=np.zeros(0) if z is None else z,
            trace=trace,
            derivative_flags=flags,
        )

    try:
        point = _evaluate(problem, x)
    except _NonFinite:
        return finish(STATUS_NUMERICAL, None, np.inf, 0)

    approx = np.eye(problem.n)
    first_update = True
    nu = opts.penalty_init
    ls_failures = 0
    kkt = np.inf
    y = np.zeros(point.ce.size)
    z = np.zeros(point.ci.size)

    for iteration in range(opts.max_iter):
        if problem.hessian is not None:
            B = np.asarray(problem.hessian(x), dtype=float)
        elif problem.curvature is not None:
            B = np.asarray(problem.curvature(x, y), dtype=float) + approx
        else:
            B = approx
        if not np.all(np.isfinite(B)):
            return finish(STATUS_NUMERICAL, point, kkt, iteration, y, z)
        qp = solve_qp(
            B,
            point.grad,
            point.je,
            -point.ce,
            point.ji,
            -point.ci,
            lo - x,
            hi - x,
            elastic_penalty=opts.elastic_penalty,
        )
        if qp.status == QP_INFEASIBLE:
            return finish(STATUS_INFEASIBLE, point, kkt, iteration, y, z)
        if qp.status not in (QP_OPTIMAL, QP_ELASTIC):
            return finish(STATUS_NUMERICAL, point, kkt, iteration, y, z)

        d = qp.x
        y, z = qp.eq, qp.ineq
        violation = _violation(point)
        kkt = _kkt_residual(point, y, z, qp.lower, qp.upper)
        if opts.trace:
            trace.append(
                {
                    "iter": iteration,
                    "f": point.f,
                    "violation": _max_violation(point),
                    "kkt": kkt,
                    "qp_status": qp.status,
                    "step_norm": float(np.max(np.abs(d))) if d.size else 0.0,
                }
            )
        if qp.status == QP_OPTIMAL and kkt <= opts.kkt_tol and _max_violation(point) <= opts.feas_tol:
            return finish(STATUS_OPTIMAL, point, kkt, iteration, y, z)
        if qp.status == QP_ELASTIC and float(np.max(np.abs(d), initial=0.0)) <= 1e-8 * (1.0 + float(np.max(np.abs(x), initial=0.0))):
            # stationary for the constraint violation but still infeasible
            return finish(STATUS_INFEASIBLE, point, kkt, iteration, y, z)

        multipliers = np.concatenate([np.abs(y), np.abs(z)])
        if multipliers.size:
            nu = max(nu, 1.1 * float(np.max(multipliers)) + 1e-6)
        phi0 = point.f + nu * violation
        linear_violation = float(np.sum(np.abs(point.ce + point.je @ d)) + np.sum(np.maximum(point.ci + point.ji @ d, 0.0)))
        slope = float(point.grad @ d) + nu * (linear_violation - violation)
        if slope >= 0.0:
            slope = -float(d @ B @ d)

        alpha = 1.0
        accepted: _Point | None = None
        x_new = x
        while alpha >= MIN_STEP:
            x_new = np.clip(x + alpha * d, lo, hi)
            try:
                candidate = _evaluate(problem, x_new)
            except _NonFinite:
                alpha *= 0.5
                continue
            if candidate.f + nu * _violation(candidate) <= phi0 + ARMIJO * alpha * slope:
                accepted = candidate
                break
            alpha *= 0.5

        if opts.trace:
            trace[-1]["alpha"] = alpha if accepted else 0.0
        if accepted is None:
            ls_failures += 1
            if ls_failures >= 2:
                return finish(STATUS_NUMERICAL, point, kkt, iteration + 1, y, z)
            approx = np.eye(problem.n)
            first_update = True
            continue
        ls_failures = 0

        if problem.hessian is None:
            s = x_new - x
            grad_new = accepted.grad + accepted.je.T @ y + accepted.ji.T @ z
            grad_old = point.grad + point.je.T @ y + point.ji.T @ z
            change = grad_new - grad_old
            if problem.curvature is not None:
                change = change - np.asarray(problem.curvature(x_new, y), dtype=float) @ s
            if first_update and float(s @ change) > 1e-16:
                approx = float(change @ change) / float(s @ change) * np.eye(problem.n)
                first_update = False
            approx = damped_bfgs_update(approx, s, change)
        x, point = x_new, accepted

    return finish(STATUS_MAX_ITER, point, kkt, opts.max_iter, y, z)


def check_derivatives(problem: NlpProblem, point: ArrayLike, *, rel_tol: float = 1e-5) -> DerivativeReport:
    """Compare supplied derivatives against central differences."""
    x = np.asarray(point, dtype=float)
    report = DerivativeReport()
    blocks: list[tuple[str, Callable[[NDArray], NDArray], NDArray]] = []

    f, grad = problem.objective(x)
    blocks.append(("objective", lambda v: np.atleast_1d(problem.objective(v)[0]), np.atleast_2d(grad)))
    if problem.equalities:
        _, je = problem.equalities(x)
        blocks.append(("equality", lambda v: np.atleast_1d(problem.equalities(v)[0]), np.asarray(je).reshape(-1, x.size)))
    if problem.inequalities:
        _, ji = problem.inequalities(x)
        blocks.append(("inequality", lambda v: np.atleast_1d(problem.inequalities(v)[0]), np.asarray(ji).reshape(-1, x.size)))

    for name, values, supplied in blocks:
        numeric = np.zeros_like(supplied)
        for j in range(x.size):
            h = 1e-6 * max(1.0, abs(x[j]))
            forward = x.copy()
            backward = x.copy()
            forward[j] += h
            backward[j] -= h
            numeric[:, j] = (values(forward) - values(backward)) / (2.0 * h)
        error = np.abs(supplied - numeric) / np.maximum(1.0, np.maximum(np.abs(supplied), np.abs(numeric)))
        report.checked += error.size
        for row, col in zip(*np.nonzero(error > rel_tol), strict=True):
            report.flags.append(
                DerivativeFlag(name, int(row), int(col), float(supplied[row, col]), float(numeric[row, col]), float(error[row, col]))
            )
    return report
