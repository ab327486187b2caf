"""Dense convex QP solver.

    minimize    1/2 x'Hx + g'x
    subject to  A_eq x = b_eq,  A_in x <= b_in,  lower <= x <= upper

Dual active-set method: start at the unconstrained (equality-constrained)
minimizer and add violated constraints one at a time, dropping constraints
whose multipliers would turn negative. Infeasible problems are re-solved in
elastic form with l1-penalized slacks on the general rows.

Multipliers follow  Hx + g + A_eq'y + A_in'z - z_lower + z_upper = 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.constants import QP_ELASTIC_PENALTY
from app.errors import InvalidArgument

QP_OPTIMAL = "optimal"
QP_ELASTIC = "elastic"
QP_INFEASIBLE = "infeasible"
QP_MAX_ITER = "max_iter"
QP_NUMERICAL = "numerical_failure"

ELASTIC_CURVATURE = 1.0


@dataclass
class QpResult:
    x: NDArray
    eq: NDArray
    ineq: NDArray
    lower: NDArray
    upper: NDArray
    status: str
    iterations: int
    objective: float
    elastic_violation: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status in (QP_OPTIMAL, QP_ELASTIC)


@dataclass
class _DualResult:
    status: str
    x: NDArray
    u_eq: NDArray
    u_in: NDArray
    iterations: int


def _rows(matrix: ArrayLike | None, rhs: ArrayLike | None, n: int, name: str) -> tuple[NDArray, NDArray]:
    if matrix is None:
        return np.zeros((0, n)), np.zeros(0)
    a = np.atleast_2d(np.asarray(matrix, dtype=float))
    b = np.atleast_1d(np.asarray(rhs, dtype=float))
    if a.size == 0:
        return np.zeros((0, n)), np.zeros(0)
    if a.shape[1] != n or a.shape[0] != b.size:
        raise InvalidArgument(f"{name} rows have inconsistent dimensions")
    return a, b


def _schur_solve(g_inv: NDArray, cols: NDArray, rhs: NDArray) -> tuple[NDArray, NDArray]:
    """Solve [[G, N], [N', 0]] [z; r] = [rhs; 0] given G^-1."""
    g_inv_rhs = g_inv @ rhs
    if cols.shape[1] == 0:
        return g_inv_rhs, np.zeros(0)
    g_inv_n = g_inv @ cols
    schur = cols.T @ g_inv_n
    target = cols.T @ g_inv_rhs
    try:
        r = np.linalg.solve(schur, target)
    except np.linalg.LinAlgError:
        r = np.linalg.lstsq(schur, target, rcond=None)[0]
    return g_inv_rhs - g_inv_n @ r, r


def _dual_active_set(
    G: NDArray,
    a: NDArray,
    E: NDArray,
    e: NDArray,
    C: NDArray,
    d: NDArray,
    *,
    tol: float,
    max_iter: int,
) -> _DualResult:
    """Minimize 1/2 x'Gx + a'x s.t. Ex = e, Cx >= d for positive definite G."""
    n = a.size
    m_eq = E.shape[0]
    m_in = C.shape[0]
    try:
        chol = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        return _DualResult(QP_NUMERICAL, np.zeros(n), np.zeros(m_eq), np.zeros(m_in), 0)
    chol_inv = np.linalg.inv(chol)
    g_inv = chol_inv.T @ chol_inv
    g_scale = float(np.max(np.abs(np.diag(G))))

    x = -(g_inv @ a)
    u_eq = np.zeros(m_eq)
    if m_eq:
        schur = E @ g_inv @ E.T
        try:
            u_eq = np.linalg.solve(schur, e - E @ x)
        except np.linalg.LinAlgError:
            u_eq = np.linalg.lstsq(schur, e - E @ x, rcond=None)[0]
        x = x + g_inv @ (E.T @ u_eq)
        if np.max(np.abs(E @ x - e)) > 1e-9 * (1.0 + float(np.max(np.abs(e)))):
            return _DualResult(QP_INFEASIBLE, x, u_eq, np.zeros(m_in), 0)

    active: list[int] = []
    u_act: list[float] = []
    row_tol = tol * (1.0 + np.abs(d))
    iterations = 0

    while True:
        slack = C @ x - d
        if active:
            slack[active] = np.inf
        violated = slack < -row_tol
        if not np.any(violated):
            u_in = np.zeros(m_in)
            for idx, value in zip(active, u_act, strict=True):
                u_in[idx] = value
            return _DualResult(QP_OPTIMAL, x, u_eq, u_in, iterations)

        p = int(np.argmin(np.where(violated, slack, np.inf)))
        n_p = C[p]
        u_p = 0.0
        while True:
            iterations += 1
            if iterations > max_iter:
                u_in = np.zeros(m_in)
                for idx, value in zip(active, u_act, strict=True):
                    u_in[idx] = value
                return _DualResult(QP_MAX_ITER, x, u_eq, u_in, iterations)

            cols = np.hstack([E.T, C[active].T]) if active else E.T.copy()
            z, r = _schur_solve(g_inv, cols, n_p)
            r_eq, r_act = r[:m_eq], r[m_eq:]

            t1 = np.inf
            drop = -1
            for j, rj in enumerate(r_act):
                if rj > 1e-14 and u_act[j] / rj < t1:
                    t1 = u_act[j] / rj
                    drop = j

            curvature = float(z @ n_p)
            if curvature <= 1e-12 * float(n_p @ n_p) / max(g_scale, 1e-300):
                t2 = np.inf
            else:
                t2 = -(float(n_p @ x) - d[p]) / curvature

            step = min(t1, t2)
            if not np.isfinite(step):
                u_in = np.zeros(m_in)
                for idx, value in zip(active, u_act, strict=True):
                    u_in[idx] = value
                return _DualResult(QP_INFEASIBLE, x, u_eq, u_in, iterations)

            if np.isfinite(t2):
                x = x + step * z
            u_eq = u_eq - step * r_eq
            u_act = [max(0.0, value - step * rj) for value, rj in zip(u_act, r_act, strict=True)]
            u_p += step

            if step == t2:
                active.append(p)
                u_act.append(u_p)
                break
            del active[drop]
            del u_act[drop]


def _regularize(H: NDArray) -> tuple[NDArray, float]:
    """Shift H to be positive definite; returns the shift when H was only semidefinite."""
    sym = 0.5 * (H + H.T)
    if sym.size == 0:
        return sym, 0.0
    eig = np.linalg.eigvalsh(sym)
    floor = 1e-8 * max(1.0, float(np.max(np.abs(eig))))
    if eig[0] < floor:
        shift = floor - float(eig[0])
        return sym + shift * np.eye(sym.shape[0]), shift if eig[0] <= 0.0 else 0.0
    return sym, 0.0


def solve_qp(
    H: ArrayLike,
    g: ArrayLike,
    A_eq: ArrayLike | None = None,
    b_eq: ArrayLike | None = None,
    A_in: ArrayLike | None = None,
    b_in: ArrayLike | None = None,
    lower: ArrayLike | None = None,
    upper: ArrayLike | None = None,
    *,
    elastic_penalty: float = QP_ELASTIC_PENALTY,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> QpResult:
    grad = np.atleast_1d(np.asarray(g, dtype=float))
    n = grad.size
    hess = np.atleast_2d(np.asarray(H, dtype=float))
    if hess.shape != (n, n):
        raise InvalidArgument("H must be square and match g")
    e_rows, e_rhs = _rows(A_eq, b_eq, n, "equality")
    i_rows, i_rhs = _rows(A_in, b_in, n, "inequality")
    lo = np.full(n, -np.inf) if lower is None else np.asarray(lower, dtype=float)
    hi = np.full(n, np.inf) if upper is None else np.asarray(upper, dtype=float)
    if np.any(lo > hi):
        empty = np.zeros(0)
        return QpResult(np.clip(np.zeros(n), lo, hi), empty, empty, np.zeros(n), np.zeros(n), QP_INFEASIBLE, 0, np.nan)
    if not (np.all(np.isfinite(hess)) and np.all(np.isfinite(grad))):
        return _failed(n, e_rows.shape[0], i_rows.shape[0])

    G, shift = _regularize(hess)
    cap = max_iter or 50 * (n + i_rows.shape[0] + 2 * n + 1)

    lower_idx = np.flatnonzero(np.isfinite(lo))
    upper_idx = np.flatnonzero(np.isfinite(hi))
    eye = np.eye(n)
    C = np.vstack([-i_rows, eye[lower_idx], -eye[upper_idx]])
    d = np.concatenate([-i_rhs, lo[lower_idx], -hi[upper_idx]])

    result = _dual_active_set(G, grad, e_rows, e_rhs, C, d, tol=tol, max_iter=cap)
    status = result.status
    x, u_eq, u_c = result.x, result.u_eq, result.u_in
    iterations = result.iterations
    elastic_violation = 0.0

    if status == QP_INFEASIBLE and (e_rows.shape[0] or i_rows.shape[0]):
        elastic = _solve_elastic(G, grad, e_rows, e_rhs, i_rows, i_rhs, lo, hi, elastic_penalty, tol, cap)
        iterations += elastic.iterations
        if elastic.status == QP_OPTIMAL:
            status = QP_ELASTIC
            x = elastic.x[:n]
            u_eq = elastic.u_eq
            m_in = i_rows.shape[0]
            # elastic rows: [-A_in | I] >= -b_in, then x bounds, then slack bounds
            u_c = np.concatenate([elastic.u_in[:m_in], elastic.u_in[m_in : m_in + lower_idx.size + upper_idx.size]])
            elastic_violation = float(np.sum(elastic.x[n:]))
        else:
            status = QP_INFEASIBLE

    # stationarity carried by the shift means an unbounded flat direction
    if shift and shift * float(np.max(np.abs(x), initial=0.0)) > 1e-6 * max(1.0, float(np.max(np.abs(grad), initial=0.0))):
        status = QP_NUMERICAL

    m_in = i_rows.shape[0]
    z_in = u_c[:m_in]
    z_lower = np.zeros(n)
    z_upper = np.zeros(n)
    z_lower[lower_idx] = u_c[m_in : m_in + lower_idx.size]
    z_upper[upper_idx] = u_c[m_in + lower_idx.size :]
    objective = float(0.5 * x @ hess @ x + grad @ x)
    return QpResult(x, -u_eq, z_in, z_lower, z_upper, status, iterations, objective, elastic_violation)


def _solve_elastic(
    G: NDArray,
    grad: NDArray,
    e_rows: NDArray,
    e_rhs: NDArray,
    i_rows: NDArray,
    i_rhs: NDArray,
    lo: NDArray,
    hi: NDArray,
    penalty: float,
    tol: float,
    cap: int,
) -> _DualResult:
    n = grad.size
    m_eq, m_in = e_rows.shape[0], i_rows.shape[0]
    n_slack = m_in + 2 * m_eq
    total = n + n_slack
    g_el = np.zeros((total, total))
    g_el[:n, :n] = G
    g_el[n:, n:] = ELASTIC_CURVATURE * np.eye(n_slack)
    a_el = np.concatenate([grad, np.full(n_slack, penalty)])

    # A_in x - t <= b_in   ->   -A_in x + t >= -b_in
    in_block = np.hstack([-i_rows, np.eye(m_in), np.zeros((m_in, 2 * m_eq))])
    eye = np.eye(total)
    lower_idx = np.flatnonzero(np.isfinite(lo))
    upper_idx = np.flatnonzero(np.isfinite(hi))
    C = np.vstack([in_block, eye[lower_idx], -eye[upper_idx], eye[n:]])
    d = np.concatenate([-i_rhs, lo[lower_idx], -hi[upper_idx], np.zeros(n_slack)])

    # A_eq x - p + q = b_eq
    E = np.hstack([e_rows, np.zeros((m_eq, m_in)), -np.eye(m_eq), np.eye(m_eq)]) if m_eq else np.zeros((0, total))
    return _dual_active_set(g_el, a_el, E, e_rhs, C, d, tol=tol, max_iter=cap)


def _failed(n: int, m_eq: int, m_in: int) -> QpResult:
    return QpResult(np.zeros(n), np.zeros(m_eq), np.zeros(m_in), np.zeros(n), np.zeros(n), QP_NUMERICAL, 0, np.nan)
