"""Optimal-control problems for the four benchmark controllers.

All branches are single-shooting: decisions are input sequences (plus the
performance slacks and the deterioration variable where present). States,
GP moments and state variances are forward recursions of the inputs, with
sensitivities chained stage by stage so every callback returns exact
first derivatives.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.constants import BUDGET_EPS, TIGHTEN_EPS
from app.errors import AssumptionViolation, InvalidArgument, RmpcInfeasible
from app.models import ScenarioConfig
from services.gp_service import GpModel, predict_batch
from services.learning_ledger import LearningLedger, deterioration_bounds
from services.nlp_solver import STATUS_OPTIMAL, NlpProblem, NlpSolution, SqpOptions, solve_sqp
from services.plant_model import DiscreteModel, PlantParams, discretize, equilibrium_input, nominal_jacobian
from services.set_service import (
    BoxSet,
    LqrSolution,
    Polytope,
    compute_rci,
    solve_dare,
    terminal_disturbance,
    tighten_sequences,
)

HARD_TOL = 1e-6
SLACK_CURVATURE = 1e-6

PROBLEM_RMPC = "rmpc"
PROBLEM_PASSIVE = "passive"
PROBLEM_ACTIVE = "active"
PROBLEM_SINGLE_BASELINE = "single_horizon_baseline"
PROBLEM_SINGLE_ACTIVE = "single_horizon_active"
PROBLEM_KINDS = (PROBLEM_RMPC, PROBLEM_PASSIVE, PROBLEM_ACTIVE, PROBLEM_SINGLE_BASELINE, PROBLEM_SINGLE_ACTIVE)

FALLBACK_SHIFTED = "shifted_plan"
FALLBACK_BASELINE = "baseline"


@dataclass(frozen=True, eq=False)
class CostWeights:
    Q: NDArray
    R: float
    P: NDArray
    x_ref: NDArray
    lam: float = 1e-3

    def __post_init__(self) -> None:
        if np.min(np.linalg.eigvalsh(0.5 * (self.Q + self.Q.T))) < -1e-12:
            raise InvalidArgument("Q must be positive semidefinite")
        if not self.R > 0.0:
            raise InvalidArgument("R must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise InvalidArgument("contingency weight must lie in [0, 1]")

    def with_reference(self, x_ref: ArrayLike) -> CostWeights:
        return dataclasses.replace(self, x_ref=np.asarray(x_ref, dtype=float))


def stage_cost(weights: CostWeights, x: ArrayLike, u: float | ArrayLike) -> float:
    err = np.asarray(x, dtype=float) - weights.x_ref
    force = float(np.atleast_1d(u)[0])
    return float(err @ weights.Q @ err + weights.R * force**2)


def terminal_cost(weights: CostWeights, x: ArrayLike) -> float:
    err = np.asarray(x, dtype=float) - weights.x_ref
    return float(err @ weights.P @ err)


def trajectory_cost(weights: CostWeights, xs: ArrayLike, us: ArrayLike) -> float:
    states = np.asarray(xs, dtype=float)
    inputs = np.asarray(us, dtype=float).ravel()
    if states.shape[0] != inputs.size + 1:
        raise InvalidArgument("state trajectory must be one stage longer than the input sequence")
    return sum(stage_cost(weights, states[i], inputs[i]) for i in range(inputs.size)) + terminal_cost(weights, states[-1])


def propagate_covariance(model: DiscreteModel, gp: GpModel, x_hat: ArrayLike, u_hat: ArrayLike) -> tuple[NDArray, NDArray]:
    """State covariances Sigma_1..N and GP variances Sigma^d_0..N-1 along a mean trajectory.

    The joint state/residual covariance is block diagonal, so
    Sigma_{i+1} = A Sigma_i A' + Bg Sigma^d_i Bg'.
    """
    states = np.asarray(x_hat, dtype=float)
    inputs = np.asarray(u_hat, dtype=float).ravel()
    _, variance, _, _ = predict_batch(gp, states[: inputs.size, 0])
    sigma = np.zeros((2, 2))
    result = []
    for i in range(inputs.size):
        a, _ = nominal_jacobian(model, states[i], inputs[i])
        sigma = a @ sigma @ a.T + variance[i] * (model.Bg @ model.Bg.T)
        result.append(0.5 * (sigma + sigma.T))
    return np.array(result).reshape(-1, 2, 2), variance


def adaptive_tighten(X: BoxSet, sigma_x: ArrayLike) -> BoxSet:
    variance = np.diag(np.asarray(sigma_x, dtype=float))
    return X.shrink(2.0 * np.sqrt(np.maximum(variance, 0.0) + TIGHTEN_EPS))


@dataclass(frozen=True, eq=False)
class ControllerContext:
    """Scenario-level quantities shared by every solve of one run."""

    model: DiscreteModel
    horizon: int
    X: BoxSet
    U: BoxSet
    W: BoxSet
    lqr: LqrSolution
    gain: NDArray
    x_sets: list[BoxSet]
    u_sets: list[BoxSet]
    terminal: Polytope
    phi: NDArray
    gamma: NDArray
    cov_coeff: NDArray
    soft_penalty: float
    options: SqpOptions
    Q: NDArray
    R: float
    lam: float

    @cached_property
    def x_upper_seq(self) -> NDArray:
        return np.array([box.upper for box in self.x_sets])

    @cached_property
    def x_lower_seq(self) -> NDArray:
        return np.array([box.lower for box in self.x_sets])

    def weights(self, x_ref: ArrayLike) -> CostWeights:
        return CostWeights(Q=self.Q, R=self.R, P=self.lqr.P, x_ref=np.asarray(x_ref, dtype=float), lam=self.lam)


def disturbance_set(config: ScenarioConfig) -> BoxSet:
    lower = np.asarray(config.mpc.w_lower, dtype=float)
    upper = np.asarray(config.mpc.w_upper, dtype=float)
    if config.mpc.disturbance_scaling == "sampled":
        lower, upper = config.plant.ts * lower, config.plant.ts * upper
    return BoxSet.from_bounds(lower, upper)


def _prediction_matrices(model: DiscreteModel, horizon: int) -> tuple[NDArray, NDArray, NDArray]:
    n = model.A.shape[0]
    powers = [np.eye(n)]
    for _ in range(horizon):
        powers.append(model.A @ powers[-1])
    phi = np.array(powers)
    gamma = np.zeros((horizon + 1, n, horizon))
    cov_coeff = np.zeros((horizon + 1, horizon + 1, n))
    bu = model.Bu[:, 0]
    bg = model.Bg[:, 0]
    for i in range(1, horizon + 1):
        for j in range(i):
            gamma[i, :, j] = powers[i - 1 - j] @ bu
            cov_coeff[i, j] = (powers[i - 1 - j] @ bg) ** 2
    return phi, gamma, cov_coeff


def build_context(config: ScenarioConfig) -> ControllerContext:
    params = PlantParams.from_settings(config.plant)
    model = discretize(params)
    mpc = config.mpc
    horizon = mpc.horizon
    if horizon < 1:
        raise InvalidArgument("horizon must be at least 1")
    X = BoxSet.from_bounds(mpc.x_lower, mpc.x_upper)
    U = BoxSet.from_bounds(mpc.u_lower, mpc.u_upper)
    if not (np.all(np.isfinite(X.lower)) and np.all(np.isfinite(X.upper))):
        raise InvalidArgument("state constraint box must be bounded")
    W = disturbance_set(config)
    Q = np.diag(np.asarray(mpc.q, dtype=float))
    R = float(mpc.r)
    lqr = solve_dare(model.A, model.Bu, Q, np.array([[R]]))
    gain = lqr.K if mpc.tightening_gain == "lqr" else np.zeros_like(lqr.K)
    x_sets, u_sets = tighten_sequences(model.A, model.Bu, gain, X, U, W, horizon + 1)
    terminal_w = terminal_disturbance(model.A, model.Bu, gain, W, horizon)
    terminal = compute_rci(model.A, model.Bu, gain, x_sets[horizon], u_sets[horizon], terminal_w)
    phi, gamma, cov_coeff = _prediction_matrices(model, horizon)
    solver = config.solver
    options = SqpOptions(
        max_iter=solver.max_iter,
        kkt_tol=solver.kkt_tol,
        feas_tol=solver.feas_tol,
        elastic_penalty=solver.qp_elastic_penalty,
        verify_derivatives=solver.verify_derivatives,
        trace=solver.trace,
    )
    return ControllerContext(
        model=model,
        horizon=horizon,
        X=X,
        U=U,
        W=W,
        lqr=lqr,
        gain=gain,
        x_sets=x_sets[: horizon + 1],
        u_sets=u_sets[:horizon],
        terminal=terminal,
        phi=phi,
        gamma=gamma,
        cov_coeff=cov_coeff,
        soft_penalty=mpc.soft_penalty,
        options=options,
        Q=Q,
        R=R,
        lam=mpc.contingency_weight,
    )


@dataclass
class OcpSolution:
    problem: str
    x_bar: NDArray
    u_bar: NDArray
    x_hat: NDArray
    u_hat: NDArray
    sigma_x: NDArray
    sigma_d: NDArray
    u_applied: float
    J_perf: float
    J_cont: float
    H: float
    status: str
    kkt: float = 0.0
    iterations: int = 0
    solve_time: float = 0.0
    delta: float = 0.0
    slacks: NDArray = field(default_factory=lambda: np.zeros(0))
    contingency_feasible: bool = True
    terminal_in_set: bool = True
    budget: float = np.inf
    trace: list[dict[str, object]] = field(default_factory=list)
    # set when the solver result was replaced: FALLBACK_SHIFTED or FALLBACK_BASELINE
    fallback: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == STATUS_OPTIMAL

    @property
    def max_slack(self) -> float:
        return float(np.max(self.slacks)) if self.slacks.size else 0.0

    @property
    def max_sigma_x(self) -> float:
        if self.sigma_x.size == 0:
            return 0.0
        return float(np.sqrt(np.max(np.maximum(np.diagonal(self.sigma_x, axis1=1, axis2=2), 0.0))))

    def performance_cost(self, weights: CostWeights) -> float:
        return trajectory_cost(weights, self.x_hat, self.u_hat)


# --- rollouts -----------------------------------------------------------------


@dataclass
class _Evaluation:
    u_bar: NDArray
    u_hat: NDArray
    slacks: NDArray
    delta: float
    x_bar: NDArray
    x_hat: NDArray
    s_hat: NDArray
    var_d: NDArray
    dvar_d: NDArray
    var_x: NDArray
    dvar_x: NDArray


def _mean_rollout(ctx: ControllerContext, gp: GpModel, x0: NDArray, u: NDArray) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    """GP-mean trajectory, its input sensitivities and the GP variance (with slope) per stage."""
    N = ctx.horizon
    a = ctx.model.A
    bu = ctx.model.Bu[:, 0]
    bg = ctx.model.Bg[:, 0]
    xs = np.zeros((N + 1, 2))
    sens = np.zeros((N + 1, 2, N))
    var = np.zeros(N + 1)
    dvar = np.zeros(N + 1)
    xs[0] = x0
    for i in range(N + 1):
        mean, variance, d_mean, d_variance = predict_batch(gp, [xs[i, 0]])
        var[i], dvar[i] = variance[0], d_variance[0]
        if i == N:
            break
        xs[i + 1] = a @ xs[i] + bu * u[i] + bg * mean[0]
        sens[i + 1] = a @ sens[i] + np.outer(bg, d_mean[0] * sens[i, 0])
        sens[i + 1, :, i] += bu
    return xs, sens, var, dvar


def variance_sum(ctx: ControllerContext, gp: GpModel, x_k: ArrayLike, u_hat: ArrayLike) -> float:
    """Sum of GP variances along the mean rollout of ``u_hat``; the learning objective is its negative."""
    u = np.asarray(u_hat, dtype=float)
    if u.shape != (ctx.horizon,):
        raise InvalidArgument(f"expected {ctx.horizon} inputs, got shape {u.shape}")
    _, _, var, _ = _mean_rollout(ctx, gp, np.asarray(x_k, dtype=float), u)
    return float(np.sum(var))


class _Evaluator:
    def __init__(self, ctx: ControllerContext, gp: GpModel | None, x0: NDArray, layout: _Layout) -> None:
        self.ctx = ctx
        self.gp = gp
        self.x0 = x0
        self.layout = layout
        self._key: bytes | None = None
        self._value: _Evaluation | None = None

    def at(self, z: NDArray) -> _Evaluation:
        key = z.tobytes()
        if key != self._key or self._value is None:
            self._value = self._evaluate(z)
            self._key = key
        return self._value

    def _evaluate(self, z: NDArray) -> _Evaluation:
        ctx, layout = self.ctx, self.layout
        N = ctx.horizon
        u_hat = layout.sel_hat @ z
        u_bar = layout.sel_bar @ z if layout.sel_bar is not None else u_hat
        slacks = layout.sel_slack @ z if layout.sel_slack is not None else np.zeros(0)
        delta = float(z[layout.delta]) if layout.delta is not None else 0.0
        x_bar = ctx.phi @ self.x0 + ctx.gamma @ u_bar
        if self.gp is None:
            zeros = np.zeros(N + 1)
            return _Evaluation(
                u_bar, u_hat, slacks, delta, x_bar, x_bar, ctx.gamma, zeros, zeros,
                np.zeros((N + 1, 2)), np.zeros((N + 1, 2, N)),
            )  # fmt: skip
        x_hat, s_hat, var_d, dvar_d = _mean_rollout(ctx, self.gp, self.x0, u_hat)
        var_x = np.einsum("ijd,j->id", ctx.cov_coeff, var_d)
        dvar_x = np.einsum("ijd,jk->idk", ctx.cov_coeff, dvar_d[:, None] * s_hat[:, 0, :])
        return _Evaluation(u_bar, u_hat, slacks, delta, x_bar, x_hat, s_hat, var_d, dvar_d, var_x, dvar_x)


@dataclass
class _Layout:
    n: int
    sel_hat: NDArray
    sel_bar: NDArray | None = None
    sel_slack: NDArray | None = None
    delta: int | None = None
    lower: NDArray = field(default_factory=lambda: np.zeros(0))
    upper: NDArray = field(default_factory=lambda: np.zeros(0))


def _selector(indices: ArrayLike, n: int) -> NDArray:
    idx = np.asarray(indices, dtype=int)
    matrix = np.zeros((idx.size, n))
    matrix[np.arange(idx.size), idx] = 1.0
    return matrix


def _input_bounds(ctx: ControllerContext, robust: bool) -> tuple[NDArray, NDArray]:
    if robust:
        return np.array([box.lower[0] for box in ctx.u_sets]), np.array([box.upper[0] for box in ctx.u_sets])
    return np.full(ctx.horizon, ctx.U.lower[0]), np.full(ctx.horizon, ctx.U.upper[0])


def _layout(ctx: ControllerContext, kind: str, budget: float = np.inf) -> _Layout:
    N = ctx.horizon
    u_lo, u_hi = _input_bounds(ctx, robust=True)
    if kind in (PROBLEM_RMPC, PROBLEM_SINGLE_BASELINE, PROBLEM_SINGLE_ACTIVE):
        n = N + (1 if kind == PROBLEM_SINGLE_ACTIVE else 0)
        lower, upper = u_lo, u_hi
        delta = None
        if kind == PROBLEM_SINGLE_ACTIVE:
            lower, upper, delta = np.append(u_lo, -np.inf), np.append(u_hi, budget), N
        return _Layout(n, _selector(range(N), n), delta=delta, lower=lower, upper=upper)

    # [u_bar (N), u_hat_1..N-1 (N-1), slacks (N), delta?]
    n = 3 * N - 1 + (1 if kind == PROBLEM_ACTIVE else 0)
    hat_idx = np.concatenate([[0], np.arange(N, 2 * N - 1)])
    p_lo, p_hi = _input_bounds(ctx, robust=False)
    lower = np.concatenate([u_lo, p_lo[1:], np.zeros(N)])
    upper = np.concatenate([u_hi, p_hi[1:], np.full(N, np.inf)])
    delta = None
    if kind == PROBLEM_ACTIVE:
        lower, upper, delta = np.append(lower, -np.inf), np.append(upper, budget), 3 * N - 1
    return _Layout(
        n,
        _selector(hat_idx, n),
        sel_bar=_selector(range(N), n),
        sel_slack=_selector(range(2 * N - 1, 3 * N - 1), n),
        delta=delta,
        lower=lower,
        upper=upper,
    )


# --- cost and constraint blocks -------------------------------------------------


def _tracking_terms(weights: CostWeights, xs: NDArray, us: NDArray, sens: NDArray) -> tuple[float, NDArray, NDArray]:
    """Tracking cost with its gradient and Gauss-Newton Hessian in the input sequence."""
    N = us.size
    stage_w = np.concatenate([np.repeat(weights.Q[None], N, axis=0), weights.P[None]])
    err = xs - weights.x_ref
    value = float(np.einsum("id,ide,ie->", err, stage_w, err) + weights.R * us @ us)
    grad = 2.0 * np.einsum("id,ide,iek->k", err, stage_w, sens) + 2.0 * weights.R * us
    hess = 2.0 * np.einsum("idk,ide,iel->kl", sens, stage_w, sens) + 2.0 * weights.R * np.eye(N)
    return value, grad, hess


def _hard_values(ctx: ControllerContext, xs: NDArray) -> NDArray:
    upper = ctx.x_upper_seq[1:]
    lower = ctx.x_lower_seq[1:]
    terminal = ctx.terminal
    return np.concatenate([(xs[1:] - upper).ravel(), (lower - xs[1:]).ravel(), terminal.normals @ xs[-1] - terminal.offsets])


def _hard_jacobian(ctx: ControllerContext, sens: NDArray) -> NDArray:
    cols = sens.shape[2]
    return np.vstack([sens[1:].reshape(-1, cols), -sens[1:].reshape(-1, cols), ctx.terminal.normals @ sens[-1]])


def hard_violation(ctx: ControllerContext, xs: ArrayLike) -> float:
    return float(max(0.0, np.max(_hard_values(ctx, np.asarray(xs, dtype=float)))))


def _soft_values(ctx: ControllerContext, ev: _Evaluation) -> NDArray:
    root = np.sqrt(ev.var_x[1:] + TIGHTEN_EPS)
    margin = 2.0 * root
    upper = ev.x_hat[1:] + margin - ctx.X.upper
    lower = ctx.X.lower + margin - ev.x_hat[1:]
    slack = ev.slacks[:, None]
    return np.concatenate([(upper - slack).ravel(), (lower - slack).ravel()])


def _soft_jacobian_inputs(ev: _Evaluation) -> NDArray:
    root = np.sqrt(ev.var_x[1:] + TIGHTEN_EPS)
    d_margin = ev.dvar_x[1:] / root[:, :, None]
    cols = ev.s_hat.shape[2]
    return np.vstack([(ev.s_hat[1:] + d_margin).reshape(-1, cols), (d_margin - ev.s_hat[1:]).reshape(-1, cols)])


def _soft_jacobian_slacks(N: int) -> NDArray:
    block = -np.repeat(np.eye(N), 2, axis=0)
    return np.vstack([block, block])


def _learning_terms(ev: _Evaluation) -> tuple[float, NDArray]:
    """H = -sum of GP variances along the performance branch and its input gradient."""
    value = -float(np.sum(ev.var_d))
    grad = -(ev.dvar_d[:, None] * ev.s_hat[:, 0, :]).sum(axis=0)
    return value, grad


@dataclass
class OcpProblem:
    kind: str
    nlp: NlpProblem
    layout: _Layout
    evaluator: _Evaluator
    weights: CostWeights
    j_baseline: float = 0.0


def build_problem(
    kind: str,
    ctx: ControllerContext,
    gp: GpModel | None,
    x_k: ArrayLike,
    weights: CostWeights,
    *,
    j_baseline: float = 0.0,
    budget: float = np.inf,
) -> OcpProblem:
    if kind not in PROBLEM_KINDS:
        raise InvalidArgument(f"unknown OCP kind: {kind}")
    x0 = np.asarray(x_k, dtype=float)
    layout = _layout(ctx, kind, budget)
    evaluator = _Evaluator(ctx, None if kind == PROBLEM_RMPC else gp, x0, layout)
    N = ctx.horizon
    lam = weights.lam
    rho = ctx.soft_penalty
    sel_hat, sel_bar, sel_slack = layout.sel_hat, layout.sel_bar, layout.sel_slack
    contingency = sel_bar is not None
    learning = kind in (PROBLEM_ACTIVE, PROBLEM_SINGLE_ACTIVE)

    def objective(z: NDArray) -> tuple[float, NDArray]:
        ev = evaluator.at(z)
        if learning:
            value, grad_hat = _learning_terms(ev)
            grad = grad_hat @ sel_hat
        elif kind == PROBLEM_PASSIVE:
            j_hat, g_hat, _ = _tracking_terms(weights, ev.x_hat, ev.u_hat, ev.s_hat)
            j_bar, g_bar, _ = _tracking_terms(weights, ev.x_bar, ev.u_bar, ctx.gamma)
            value = (1.0 - lam) * j_hat + lam * j_bar
            grad = (1.0 - lam) * g_hat @ sel_hat + lam * g_bar @ sel_bar
        else:
            value, g_hat, _ = _tracking_terms(weights, ev.x_hat, ev.u_hat, ev.s_hat)
            grad = g_hat @ sel_hat
        if sel_slack is not None:
            value += rho * float(np.sum(ev.slacks))
            grad = grad + rho * sel_slack.sum(axis=0)
        return value, grad

    def hessian(z: NDArray) -> NDArray:
        ev = evaluator.at(z)
        _, _, h_hat = _tracking_terms(weights, ev.x_hat, ev.u_hat, ev.s_hat)
        if kind == PROBLEM_PASSIVE:
            _, _, h_bar = _tracking_terms(weights, ev.x_bar, ev.u_bar, ctx.gamma)
            hess = (1.0 - lam) * sel_hat.T @ h_hat @ sel_hat + lam * sel_bar.T @ h_bar @ sel_bar
            return hess + SLACK_CURVATURE * sel_slack.T @ sel_slack
        return sel_hat.T @ h_hat @ sel_hat

    def curvature(z: NDArray, multipliers: NDArray) -> NDArray:
        # Gauss-Newton part of the budget equality, weighted by its multiplier
        ev = evaluator.at(z)
        _, _, h_hat = _tracking_terms(weights, ev.x_hat, ev.u_hat, ev.s_hat)
        weight = max(float(multipliers[0]), 0.0) if multipliers.size else 0.0
        return weight * sel_hat.T @ h_hat @ sel_hat

    def inequalities(z: NDArray) -> tuple[NDArray, NDArray]:
        ev = evaluator.at(z)
        if contingency:
            hard = _hard_values(ctx, ev.x_bar)
            hard_jac = _hard_jacobian(ctx, ctx.gamma) @ sel_bar
            soft = _soft_values(ctx, ev)
            soft_jac = _soft_jacobian_inputs(ev) @ sel_hat + _soft_jacobian_slacks(N) @ sel_slack
            return np.concatenate([hard, soft]), np.vstack([hard_jac, soft_jac])
        return _hard_values(ctx, ev.x_hat), _hard_jacobian(ctx, ev.s_hat) @ sel_hat

    equalities = None
    if layout.delta is not None:
        e_delta = np.zeros(layout.n)
        e_delta[layout.delta] = 1.0

        def equalities(z: NDArray) -> tuple[NDArray, NDArray]:
            ev = evaluator.at(z)
            j_hat, g_hat, _ = _tracking_terms(weights, ev.x_hat, ev.u_hat, ev.s_hat)
            return np.array([j_hat - j_baseline - ev.delta]), (g_hat @ sel_hat - e_delta)[None, :]

    nlp = NlpProblem(
        n=layout.n,
        objective=objective,
        equalities=equalities,
        inequalities=inequalities,
        lower=layout.lower,
        upper=layout.upper,
        hessian=None if learning else hessian,
        curvature=curvature if learning else None,
        name=kind,
    )
    return OcpProblem(kind, nlp, layout, evaluator, weights, j_baseline)


# --- initial guesses ------------------------------------------------------------------


def _shift(values: NDArray) -> NDArray:
    if values.size == 0:
        return values.copy()
    return np.concatenate([values[1:], values[-1:]])


def hover_inputs(ctx: ControllerContext, x_k: ArrayLike) -> NDArray:
    """Inputs holding x_k at rest under the nominal model, one per stage."""
    return np.full(ctx.horizon, equilibrium_input(ctx.model, x_k))


def _fill_slacks(problem: OcpProblem, z: NDArray) -> NDArray:
    layout = problem.layout
    if layout.sel_slack is None:
        return z
    slack_idx = np.flatnonzero(layout.sel_slack.sum(axis=0))
    z = z.copy()
    z[slack_idx] = 0.0
    values = _soft_values(problem.evaluator.ctx, problem.evaluator.at(z))
    N = slack_idx.size
    per_stage = np.maximum(values[: 2 * N].reshape(N, 2).max(axis=1), values[2 * N :].reshape(N, 2).max(axis=1))
    z[slack_idx] = np.maximum(per_stage, 0.0)
    return z


def initial_guess(problem: OcpProblem, x_k: ArrayLike, warm_start: OcpSolution | None = None) -> NDArray:
    ctx = problem.evaluator.ctx
    layout = problem.layout
    N = ctx.horizon
    if warm_start is None:
        u_bar = u_hat = hover_inputs(ctx, x_k)
    else:
        u_bar, u_hat = _shift(warm_start.u_bar), _shift(warm_start.u_hat)
    z = np.zeros(layout.n)
    if layout.sel_bar is None:
        z[:N] = u_hat
    else:
        z[:N] = u_bar
        z[N : 2 * N - 1] = u_hat[1:]
    z = np.clip(z, layout.lower, layout.upper)
    return _fill_slacks(problem, z)


def _guess_from_baseline(problem: OcpProblem, baseline: OcpSolution) -> NDArray:
    layout = problem.layout
    N = problem.evaluator.ctx.horizon
    z = np.zeros(layout.n)
    if layout.sel_bar is None:
        z[:N] = baseline.u_hat
    else:
        z[:N] = baseline.u_bar
        z[N : 2 * N - 1] = baseline.u_hat[1:]
    return _fill_slacks(problem, np.clip(z, layout.lower, layout.upper))


# --- solve wrappers -----------------------------------------------------------------


def _check_state(ctx: ControllerContext, x_k: ArrayLike) -> NDArray:
    x0 = np.asarray(x_k, dtype=float)
    if x0.shape != (2,) or not np.all(np.isfinite(x0)):
        raise InvalidArgument("state must be a finite 2-vector")
    if not ctx.X.contains(x0):
        raise RmpcInfeasible(f"state ({x0[0]:.4g}, {x0[1]:.4g}) lies outside the state constraints")
    return x0


def _package(problem: OcpProblem, result: NlpSolution, gp: GpModel | None, started: float) -> OcpSolution:
    ctx = problem.evaluator.ctx
    weights = problem.weights
    ev = problem.evaluator.at(result.x)
    N = ctx.horizon
    if gp is not None and problem.kind != PROBLEM_RMPC:
        sigma_x, _ = propagate_covariance(ctx.model, gp, ev.x_hat, ev.u_hat)
        sigma_x = np.concatenate([np.zeros((1, 2, 2)), sigma_x])
        h_value = -float(np.sum(ev.var_d))
    else:
        sigma_x = np.zeros((N + 1, 2, 2))
        h_value = np.nan
    contingency = problem.layout.sel_bar is not None
    robust_states = ev.x_bar if contingency else ev.x_hat
    robust_inputs = ev.u_bar if contingency else ev.u_hat
    trace = [{"problem": problem.kind, **row} for row in result.trace]
    return OcpSolution(
        problem=problem.kind,
        x_bar=robust_states,
        u_bar=robust_inputs,
        x_hat=ev.x_hat,
        u_hat=ev.u_hat,
        sigma_x=sigma_x,
        sigma_d=ev.var_d,
        u_applied=float(ev.u_hat[0]),
        J_perf=trajectory_cost(weights, ev.x_hat, ev.u_hat),
        J_cont=trajectory_cost(weights, robust_states, robust_inputs),
        H=h_value,
        status=result.status,
        kkt=result.kkt_residual,
        iterations=result.iterations,
        solve_time=time.perf_counter() - started,
        delta=ev.delta,
        slacks=ev.slacks,
        contingency_feasible=hard_violation(ctx, robust_states) <= HARD_TOL,
        terminal_in_set=ctx.terminal.contains(robust_states[-1], HARD_TOL),
        budget=float(problem.layout.upper[problem.layout.delta]) if problem.layout.delta is not None else np.inf,
        trace=trace,
    )


def shifted_plan(ctx: ControllerContext, previous: OcpSolution, x_k: ArrayLike) -> NDArray:
    """Previous contingency inputs shifted one stage and corrected by the tightening gain.

    The plan stays feasible for the tightened constraints whenever x_k lies
    within W of the stage-1 state the previous plan predicted.
    """
    N = ctx.horizon
    if previous.u_bar.shape != (N,) or previous.x_bar.shape != (N + 1, 2):
        raise InvalidArgument(f"previous plan does not match horizon {N}")
    gain = ctx.gain.reshape(-1)
    a, bu = ctx.model.A, ctx.model.Bu[:, 0]
    x = np.asarray(x_k, dtype=float)
    inputs = np.zeros(N)
    for i in range(N):
        if i == N - 1:
            inputs[i] = gain @ x
        else:
            inputs[i] = previous.u_bar[i + 1] + gain @ (x - previous.x_bar[i + 1])
        x = a @ x + bu * inputs[i]
    return inputs


def _shifted_guess(problem: OcpProblem, x0: NDArray, previous: OcpSolution) -> NDArray | None:
    layout = problem.layout
    N = problem.evaluator.ctx.horizon
    inputs = shifted_plan(problem.evaluator.ctx, previous, x0)
    lower, upper = layout.lower[:N], layout.upper[:N]
    if np.any(inputs < lower - HARD_TOL) or np.any(inputs > upper + HARD_TOL):
        return None
    z = np.zeros(layout.n)
    z[:N] = np.clip(inputs, lower, upper)
    if layout.sel_bar is not None:
        z[N : 2 * N - 1] = z[1:N]
    return _fill_slacks(problem, z)


def _solve_robust(
    problem: OcpProblem,
    gp: GpModel | None,
    x0: NDArray,
    warm_start: OcpSolution | None,
    previous: OcpSolution | None = None,
) -> OcpSolution:
    """Solve a problem that must keep a feasible contingency plan.

    An unconverged or infeasible solver result gives way to the cheaper of the
    feasible last iterate and the shifted plan of ``previous`` (defaults to the
    warm start; RMPC and passive only).
    """
    started = time.perf_counter()
    result = solve_sqp(problem.nlp, initial_guess(problem, x0, warm_start), problem.evaluator.ctx.options)
    solution = _package(problem, result, gp, started) if np.all(np.isfinite(result.x)) else None
    if solution is not None and solution.optimal and solution.contingency_feasible:
        return solution
    options: list[tuple[NDArray, OcpSolution]] = []
    if solution is not None and solution.contingency_feasible:
        options.append((result.x, solution))
    if previous is None:
        previous = warm_start
    if previous is not None and problem.kind in (PROBLEM_RMPC, PROBLEM_PASSIVE):
        z = _shifted_guess(problem, x0, previous)
        if z is not None:
            shifted = _package(problem, dataclasses.replace(result, x=z), gp, started)
            if shifted.contingency_feasible:
                options.append((z, dataclasses.replace(shifted, fallback=FALLBACK_SHIFTED)))
    if not options:
        raise RmpcInfeasible(f"{problem.kind} problem is infeasible (solver status {result.status})")
    return min(options, key=lambda option: problem.nlp.objective(option[0])[0])[1]


def solve_rmpc(ctx: ControllerContext, x_k: ArrayLike, weights: CostWeights, warm_start: OcpSolution | None = None) -> OcpSolution:
    x0 = _check_state(ctx, x_k)
    problem = build_problem(PROBLEM_RMPC, ctx, None, x0, weights)
    return _solve_robust(problem, None, x0, warm_start)


def solve_passive(
    ctx: ControllerContext,
    gp: GpModel,
    x_k: ArrayLike,
    weights: CostWeights,
    warm_start: OcpSolution | None = None,
    previous: OcpSolution | None = None,
) -> OcpSolution:
    x0 = _check_state(ctx, x_k)
    problem = build_problem(PROBLEM_PASSIVE, ctx, gp, x0, weights)
    return _solve_robust(problem, gp, x0, warm_start, previous)


def baseline_cost(
    ctx: ControllerContext,
    gp: GpModel,
    x_k: ArrayLike,
    weights: CostWeights,
    warm_start: OcpSolution | None = None,
    previous: OcpSolution | None = None,
) -> tuple[float, OcpSolution]:
    """J_B from the passive performance branch, with the passive solution it came from."""
    solution = solve_passive(ctx, gp, x_k, weights, warm_start, previous)
    return solution.J_perf, solution


def _violation_at(problem: OcpProblem, z: NDArray) -> float:
    values, _ = problem.nlp.inequalities(z)
    worst = float(np.max(values, initial=0.0))
    if problem.nlp.equalities is not None:
        residual, _ = problem.nlp.equalities(z)
        worst = max(worst, float(np.max(np.abs(residual), initial=0.0)))
    return worst


def _solve_learning(
    kind: str,
    ctx: ControllerContext,
    gp: GpModel,
    x0: NDArray,
    weights: CostWeights,
    ledger: LearningLedger,
    j_plus: float,
    baseline: OcpSolution,
) -> OcpSolution:
    budget = min(deterioration_bounds(ledger, j_plus))
    if budget <= BUDGET_EPS:
        return dataclasses.replace(baseline, delta=0.0, budget=budget)
    problem = build_problem(kind, ctx, gp, x0, weights, j_baseline=baseline.J_perf, budget=budget)
    z0 = _guess_from_baseline(problem, baseline)
    scale = max(1.0, abs(baseline.J_perf))
    if _violation_at(problem, z0) > HARD_TOL * scale:
        raise AssumptionViolation(f"{kind} problem is infeasible at zero deterioration")
    started = time.perf_counter()
    result = solve_sqp(problem.nlp, z0, ctx.options)
    if np.all(np.isfinite(result.x)):
        solution = _package(problem, result, gp, started)
        deterioration = solution.J_perf - baseline.J_perf
        if solution.optimal and solution.contingency_feasible:
            return solution
        # an unconverged iterate is kept only if it is safe and explores more than the baseline
        within_budget = deterioration <= budget + HARD_TOL * scale
        informative = solution.H <= baseline.H + HARD_TOL * max(1.0, abs(baseline.H))
        if solution.contingency_feasible and within_budget and informative:
            return dataclasses.replace(solution, delta=deterioration)
    return dataclasses.replace(
        baseline,
        delta=0.0,
        budget=budget,
        status=result.status,
        kkt=result.kkt_residual,
        iterations=result.iterations,
        solve_time=time.perf_counter() - started,
        trace=[{"problem": kind, **row} for row in result.trace],
        fallback=FALLBACK_BASELINE,
    )


def solve_active(
    ctx: ControllerContext,
    gp: GpModel,
    x_k: ArrayLike,
    weights: CostWeights,
    ledger: LearningLedger,
    j_plus: float,
    baseline: OcpSolution,
) -> OcpSolution:
    """Exploration under the deterioration budget.

    Falls back to the baseline (marked FALLBACK_BASELINE) when the solver ends
    without a usable plan; raises AssumptionViolation only when the baseline
    itself violates the learning problem at zero deterioration.
    """
    x0 = _check_state(ctx, x_k)
    return _solve_learning(PROBLEM_ACTIVE, ctx, gp, x0, weights, ledger, j_plus, baseline)


def single_horizon_baseline(
    ctx: ControllerContext,
    gp: GpModel,
    x_k: ArrayLike,
    weights: CostWeights,
    warm_start: OcpSolution | None = None,
) -> OcpSolution:
    x0 = _check_state(ctx, x_k)
    problem = build_problem(PROBLEM_SINGLE_BASELINE, ctx, gp, x0, weights)
    return _solve_robust(problem, gp, x0, warm_start)


def solve_single_horizon_active(
    ctx: ControllerContext,
    gp: GpModel,
    x_k: ArrayLike,
    weights: CostWeights,
    ledger: LearningLedger,
    j_plus: float,
    baseline: OcpSolution,
) -> OcpSolution:
    x0 = _check_state(ctx, x_k)
    return _solve_learning(PROBLEM_SINGLE_ACTIVE, ctx, gp, x0, weights, ledger, j_plus, baseline)
