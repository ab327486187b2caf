"""Set arithmetic for robust MPC.

LQR synthesis, zonotopic disturbance-reach sets, box/zonotope constraint
tightening and the robust invariant terminal set used by the contingency
branch.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linprog

from app.constants import DARE_MAX_ITER, DARE_TOL, RCI_MAX_ITER, RCI_TOL
from app.errors import InfeasibleTightening, InvalidArgument, NoRciExists, NumericalFailure


def _as_matrix(value: ArrayLike, name: str) -> NDArray:
    arr = np.atleast_2d(np.asarray(value, dtype=float))
    if arr.ndim != 2:
        raise InvalidArgument(f"{name} must be a matrix")
    return arr


@dataclass(frozen=True, eq=False)
class BoxSet:
    lower: NDArray
    upper: NDArray

    @classmethod
    def from_bounds(cls, lower: ArrayLike, upper: ArrayLike) -> BoxSet:
        lo = np.atleast_1d(np.asarray(lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size < 1:
            raise InvalidArgument("box bounds must be vectors of equal length")
        lo.setflags(write=False)
        hi.setflags(write=False)
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return int(self.lower.size)

    @property
    def is_empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    def contains(self, x: ArrayLike, tol: float = 0.0) -> bool:
        point = np.asarray(x, dtype=float)
        return bool(np.all(point >= self.lower - tol) and np.all(point <= self.upper + tol))

    def support(self, v: ArrayLike) -> float:
        direction = np.asarray(v, dtype=float)
        if direction.shape != self.lower.shape:
            raise InvalidArgument("direction dimension does not match the box")
        return float(np.sum(np.maximum(direction * self.lower, direction * self.upper)))

    def vertices(self) -> NDArray:
        return np.array(list(itertools.product(*zip(self.lower, self.upper, strict=True))), dtype=float)

    def violation(self, x: ArrayLike) -> float:
        point = np.asarray(x, dtype=float)
        return float(max(0.0, np.max(self.lower - point), np.max(point - self.upper)))

    def shrink(self, margin: ArrayLike) -> BoxSet:
        amount = np.asarray(margin, dtype=float)
        return BoxSet.from_bounds(self.lower + amount, self.upper - amount)


@dataclass(frozen=True, eq=False)
class Zonotope:
    center: NDArray
    generators: NDArray  # one generator per column

    @classmethod
    def point(cls, center: ArrayLike) -> Zonotope:
        c = np.atleast_1d(np.asarray(center, dtype=float))
        return cls(c, np.zeros((c.size, 0)))

    @classmethod
    def from_generators(cls, center: ArrayLike, generators: ArrayLike) -> Zonotope:
        """Build from a sequence of generator vectors."""
        c = np.atleast_1d(np.asarray(center, dtype=float))
        g = np.asarray(generators, dtype=float)
        if g.size == 0:
            return cls.point(c)
        return cls._from_columns(c, np.atleast_2d(g).T)

    @classmethod
    def _from_columns(cls, center: NDArray, columns: NDArray) -> Zonotope:
        if columns.shape[0] != center.size:
            raise InvalidArgument("generators must share the center's dimension")
        keep = np.linalg.norm(columns, axis=0) > 0.0
        return cls(center, columns[:, keep])

    @classmethod
    def from_box(cls, box: BoxSet) -> Zonotope:
        half = 0.5 * (box.upper - box.lower)
        return cls.from_generators(0.5 * (box.upper + box.lower), np.diag(half))

    @property
    def dim(self) -> int:
        return int(self.center.size)

    def linear_map(self, matrix: ArrayLike) -> Zonotope:
        m = _as_matrix(matrix, "matrix")
        return Zonotope._from_columns(m @ self.center, m @ self.generators)

    def minkowski_sum(self, other: Zonotope) -> Zonotope:
        if other.dim != self.dim:
            raise InvalidArgument("zonotope dimensions differ")
        return Zonotope._from_columns(self.center + other.center, np.hstack([self.generators, other.generators]))


@dataclass(frozen=True, eq=False)
class Polytope:
    normals: NDArray
    offsets: NDArray

    @property
    def dim(self) -> int:
        return int(self.normals.shape[1])

    def contains(self, x: ArrayLike, tol: float = 1e-9) -> bool:
        return bool(np.all(self.normals @ np.asarray(x, dtype=float) <= self.offsets + tol))

    def chebyshev_center(self) -> tuple[NDArray, float]:
        norms = np.linalg.norm(self.normals, axis=1)
        cost = np.zeros(self.dim + 1)
        cost[-1] = -1.0
        res = linprog(
            cost,
            A_ub=np.hstack([self.normals, norms[:, None]]),
            b_ub=self.offsets,
            bounds=[(None, None)] * self.dim + [(0.0, None)],
            method="highs",
        )
        if res.status == 2:
            raise NoRciExists("polytope is empty")
        if res.status != 0:
            raise NumericalFailure(f"Chebyshev centre LP failed: {res.message}")
        return np.asarray(res.x[:-1]), float(res.x[-1])

    def boundary_samples(self, count: int, rng: np.random.Generator) -> NDArray:
        center, _radius = self.chebyshev_center()
        samples: list[NDArray] = []
        slack = self.offsets - self.normals @ center
        while len(samples) < count:
            direction = rng.standard_normal(self.dim)
            direction /= np.linalg.norm(direction)
            rate = self.normals @ direction
            positive = rate > 1e-12
            if not np.any(positive):
                continue
            step = float(np.min(slack[positive] / rate[positive]))
            samples.append(center + step * direction)
        return np.array(samples)


@dataclass(frozen=True, eq=False)
class LqrSolution:
    P: NDArray
    K: NDArray

    def closed_loop(self, A: ArrayLike, B: ArrayLike) -> NDArray:
        return _as_matrix(A, "A") + _as_matrix(B, "B") @ self.K


def dare_residual(A: ArrayLike, B: ArrayLike, Q: ArrayLike, R: ArrayLike, P: ArrayLike) -> float:
    a, b, q, r, p = (_as_matrix(m, "matrix") for m in (A, B, Q, R, P))
    gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    return float(np.linalg.norm(a.T @ p @ a - p - a.T @ p @ b @ gain + q))


def spectral_radius(matrix: ArrayLike) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(_as_matrix(matrix, "matrix")))))


def solve_dare(A: ArrayLike, B: ArrayLike, Q: ArrayLike, R: ArrayLike) -> LqrSolution:
    """Solve the discrete algebraic Riccati equation by fixed-point iteration.

    The gain follows the closed-loop convention ``A + B K``.
    """
    a = _as_matrix(A, "A")
    b = _as_matrix(B, "B")
    q = _as_matrix(Q, "Q")
    r = _as_matrix(R, "R")
    n = a.shape[0]
    if a.shape != (n, n) or b.shape[0] != n or q.shape != (n, n) or r.shape != (b.shape[1], b.shape[1]):
        raise InvalidArgument("inconsistent DARE dimensions")
    if not np.allclose(r, r.T) or np.min(np.linalg.eigvalsh(0.5 * (r + r.T))) <= 0.0:
        raise InvalidArgument("R must be symmetric positive definite")
    if not np.allclose(q, q.T) or np.min(np.linalg.eigvalsh(0.5 * (q + q.T))) < -1e-12:
        raise InvalidArgument("Q must be symmetric positive semidefinite")

    p = q.copy()
    for _ in range(DARE_MAX_ITER):
        gain = np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
        p_next = q + a.T @ p @ a - a.T @ p @ b @ gain
        p_next = 0.5 * (p_next + p_next.T)
        if not np.all(np.isfinite(p_next)):
            raise NumericalFailure("DARE iteration diverged; check stabilizability of (A, B)")
        step = float(np.max(np.abs(p_next - p)))
        p = p_next
        if step <= DARE_TOL * max(1.0, float(np.max(np.abs(p)))):
            break
    else:
        raise NumericalFailure(f"DARE did not converge within {DARE_MAX_ITER} iterations")

    k = -np.linalg.solve(r + b.T @ p @ b, b.T @ p @ a)
    return LqrSolution(P=p, K=k)


def zonotope_support(zonotope: Zonotope, v: ArrayLike) -> float:
    direction = np.atleast_1d(np.asarray(v, dtype=float))
    if direction.size != zonotope.dim:
        raise InvalidArgument(f"direction has dimension {direction.size}, zonotope has {zonotope.dim}")
    return float(direction @ zonotope.center + np.sum(np.abs(direction @ zonotope.generators)))


def box_minus_zonotope(box: BoxSet, zonotope: Zonotope) -> BoxSet:
    eye = np.eye(box.dim)
    upper = np.array([box.upper[j] - zonotope_support(zonotope, eye[j]) for j in range(box.dim)])
    lower = np.array([box.lower[j] + zonotope_support(zonotope, -eye[j]) for j in range(box.dim)])
    return BoxSet.from_bounds(lower, upper)


def reach_sets(A: ArrayLike, B: ArrayLike, K: ArrayLike, W: BoxSet, N: int) -> list[Zonotope]:
    """Error-reach zonotopes R_0..R_N, R_i = sum_{j<i} (A+BK)^j W."""
    phi = _as_matrix(A, "A") + _as_matrix(B, "B") @ _as_matrix(K, "K")
    w = Zonotope.from_box(W)
    result = [Zonotope.point(np.zeros(W.dim))]
    power = np.eye(W.dim)
    for _ in range(N):
        result.append(result[-1].minkowski_sum(w.linear_map(power)))
        power = phi @ power
    return result


def tighten_sequences(
    A: ArrayLike,
    B: ArrayLike,
    K: ArrayLike,
    X: BoxSet,
    U: BoxSet,
    W: BoxSet,
    N: int,
) -> tuple[list[BoxSet], list[BoxSet]]:
    if N < 0:
        raise InvalidArgument("horizon must be non-negative")
    if not W.contains(np.zeros(W.dim)):
        raise InvalidArgument("W must contain the origin")
    k = _as_matrix(K, "K")
    reach = reach_sets(A, B, k, W, N)
    x_sets: list[BoxSet] = []
    u_sets: list[BoxSet] = []
    for i, r_i in enumerate(reach):
        x_bar = box_minus_zonotope(X, r_i)
        if x_bar.is_empty:
            raise InfeasibleTightening(f"tightened state set at stage {i} is empty; horizon too long for W")
        x_sets.append(x_bar)
        if i < N:
            u_bar = box_minus_zonotope(U, r_i.linear_map(k))
            if u_bar.is_empty:
                raise InfeasibleTightening(f"tightened input set at stage {i} is empty")
            u_sets.append(u_bar)
    return x_sets, u_sets


def terminal_disturbance(A: ArrayLike, B: ArrayLike, K: ArrayLike, W: BoxSet, N: int) -> BoxSet:
    """Box hull of (A+BK)^N W, the disturbance a shifted plan carries into its last stage."""
    if N < 0:
        raise InvalidArgument("horizon must be non-negative")
    phi = _as_matrix(A, "A") + _as_matrix(B, "B") @ _as_matrix(K, "K")
    power = np.linalg.matrix_power(phi, N)
    center = power @ (0.5 * (W.upper + W.lower))
    half = np.abs(power) @ (0.5 * (W.upper - W.lower))
    return BoxSet.from_bounds(center - half, center + half)


def _constraint_polytope(K: NDArray, X: BoxSet, U: BoxSet) -> tuple[NDArray, NDArray]:
    eye = np.eye(X.dim)
    rows = [eye, -eye, K, -K]
    offsets = [X.upper, -X.lower, U.upper, -U.lower]
    normals = np.vstack(rows)
    rhs = np.concatenate(offsets)
    finite = np.isfinite(rhs)
    return normals[finite], rhs[finite]


def _max_over(normals: NDArray, offsets: NDArray, direction: NDArray) -> tuple[int, float]:
    res = linprog(-direction, A_ub=normals, b_ub=offsets, bounds=[(None, None)] * normals.shape[1], method="highs")
    if res.status == 0:
        return 0, float(-res.fun)
    return int(res.status), np.inf


def compute_rci(A: ArrayLike, B: ArrayLike, K: ArrayLike, X_N: BoxSet, U: BoxSet, W: BoxSet) -> Polytope:
    """Robust invariant set of x+ = (A+BK)x + w, w in W, inside {x in X_N : Kx in U}.

    With W the terminal_disturbance of the tightening, the set closes the
    recursion of tightened plans: a shifted plan stays feasible.
    """
    k = _as_matrix(K, "K")
    phi = _as_matrix(A, "A") + _as_matrix(B, "B") @ k
    if spectral_radius(phi) >= 1.0:
        raise InvalidArgument("closed loop A+BK is not Schur stable")
    if X_N.is_empty or U.is_empty:
        raise InvalidArgument("terminal constraint sets must be non-empty")

    normals, offsets = _constraint_polytope(k, X_N, U)
    frontier = np.arange(normals.shape[0])
    for _ in range(RCI_MAX_ITER):
        added_rows: list[NDArray] = []
        added_rhs: list[float] = []
        for idx in frontier:
            row = normals[idx] @ phi
            rhs = offsets[idx] - W.support(normals[idx])
            scale = float(np.linalg.norm(row))
            if scale < 1e-12:
                if rhs < -RCI_TOL:
                    raise NoRciExists("disturbance alone leaves the constraint set")
                continue
            row, rhs = row / scale, rhs / scale
            status, value = _max_over(normals, offsets, row)
            if status == 2:
                raise NoRciExists("robust invariant set is empty")
            if value > rhs + RCI_TOL:
                added_rows.append(row)
                added_rhs.append(rhs)
        if not added_rows:
            result = Polytope(normals, offsets)
            result.chebyshev_center()
            return result
        start = normals.shape[0]
        normals = np.vstack([normals, np.array(added_rows)])
        offsets = np.concatenate([offsets, np.array(added_rhs)])
        frontier = np.arange(start, normals.shape[0])
    raise NumericalFailure(f"RCI iteration did not converge within {RCI_MAX_ITER} iterations")


def verify_rci(
    terminal: Polytope,
    closed_loop: ArrayLike,
    W: BoxSet,
    *,
    samples: int = 1000,
    seed: int = 0,
    tol: float = 1e-9,
) -> int:
    """Count one-step invariance violations over boundary samples and W vertices."""
    phi = _as_matrix(closed_loop, "closed_loop")
    rng = np.random.default_rng(seed)
    violations = 0
    for x in terminal.boundary_samples(samples, rng):
        for w in W.vertices():
            if not terminal.contains(phi @ x + w, tol):
                violations += 1
    return violations
