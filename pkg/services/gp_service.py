"""Scalar Gaussian-process regression of the residual dynamics.

Exact and FITC-sparse posteriors share one prediction path: both reduce to
a basis (training or inducing inputs), a weight vector for the mean and a
symmetric matrix for the variance reduction.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from app.constants import GP_DUPLICATE_TOL, GP_JITTER, GP_MODES
from app.errors import InvalidArgument, NumericalFailure
from app.models import GpSettings


@dataclass(frozen=True)
class GpHyper:
    sigma_f2: float = 0.33
    length_scale: float = 0.3
    sigma_v2: float = 0.0
    jitter: float = GP_JITTER

    def __post_init__(self) -> None:
        if not self.sigma_f2 > 0.0:
            raise InvalidArgument("sigma_f2 must be positive")
        if not self.length_scale > 0.0:
            raise InvalidArgument("length_scale must be positive")
        if self.sigma_v2 < 0.0:
            raise InvalidArgument("sigma_v2 must be non-negative")
        if not self.jitter > 0.0:
            raise InvalidArgument("jitter must be positive")

    @classmethod
    def from_settings(cls, settings: GpSettings) -> GpHyper:
        return cls(settings.sigma_f2, settings.length_scale, settings.sigma_v2, settings.jitter)


@dataclass
class GpDataset:
    steps: list[int] = field(default_factory=list)
    inputs: list[float] = field(default_factory=list)
    targets: list[float] = field(default_factory=list)
    max_points: int = 0

    def __len__(self) -> int:
        return len(self.inputs)

    def append(self, k: int, z: float, y: float) -> bool:
        """Append a sample unless its feature duplicates an existing one."""
        if any(abs(z - existing) <= GP_DUPLICATE_TOL for existing in self.inputs):
            return False
        self.steps.append(int(k))
        self.inputs.append(float(z))
        self.targets.append(float(y))
        if self.max_points and len(self.inputs) > self.max_points:
            del self.steps[0], self.inputs[0], self.targets[0]
        return True

    def copy(self) -> GpDataset:
        return GpDataset(list(self.steps), list(self.inputs), list(self.targets), self.max_points)


@dataclass(frozen=True, eq=False)
class GpModel:
    hyper: GpHyper
    mode: str
    basis: NDArray
    weights: NDArray
    reduction: NDArray
    size: int
    inducing: NDArray | None = None

    @property
    def is_prior(self) -> bool:
        return self.basis.size == 0


def kernel(hyper: GpHyper, z: float, z_prime: float) -> float:
    return float(hyper.sigma_f2 * np.exp(-((z - z_prime) ** 2) / (2.0 * hyper.length_scale**2)))


def kernel_matrix(hyper: GpHyper, a: ArrayLike, b: ArrayLike) -> NDArray:
    left = np.asarray(a, dtype=float).reshape(-1, 1)
    right = np.asarray(b, dtype=float).reshape(1, -1)
    return hyper.sigma_f2 * np.exp(-((left - right) ** 2) / (2.0 * hyper.length_scale**2))


def _cholesky(matrix: NDArray, what: str) -> NDArray:
    try:
        return scipy.linalg.cholesky(matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"{what} factorization failed; check jitter and hyperparameters") from exc


def prior_model(hyper: GpHyper, mode: str = "exact") -> GpModel:
    empty = np.zeros(0)
    return GpModel(hyper, mode, empty, empty, np.zeros((0, 0)), 0)


def fit(dataset: GpDataset, hyper: GpHyper, mode: str = "exact", inducing: ArrayLike | None = None) -> GpModel:
    if mode not in GP_MODES:
        raise InvalidArgument(f"unknown GP mode: {mode}")
    if len(dataset) == 0:
        return prior_model(hyper, mode)
    z = np.asarray(dataset.inputs, dtype=float)
    y = np.asarray(dataset.targets, dtype=float)

    if mode == "exact":
        gram = kernel_matrix(hyper, z, z) + (hyper.sigma_v2 + hyper.jitter) * np.eye(z.size)
        chol = _cholesky(gram, "Gram matrix")
        weights = scipy.linalg.cho_solve((chol, True), y)
        reduction = scipy.linalg.cho_solve((chol, True), np.eye(z.size))
        return GpModel(hyper, mode, z, weights, 0.5 * (reduction + reduction.T), z.size)

    if inducing is None or np.asarray(inducing).size < 1:
        raise InvalidArgument("sparse mode requires at least one inducing input")
    u = np.atleast_1d(np.asarray(inducing, dtype=float))
    k_uu = kernel_matrix(hyper, u, u) + hyper.jitter * np.eye(u.size)
    c = _cholesky(k_uu, "inducing Gram matrix")
    v = scipy.linalg.solve_triangular(c, kernel_matrix(hyper, u, z), lower=True)
    nu = hyper.sigma_f2 - np.sum(v**2, axis=0) + hyper.sigma_v2 + hyper.jitter
    nu = np.maximum(nu, hyper.jitter)
    b = np.eye(u.size) + (v / nu) @ v.T
    low = _cholesky(b, "FITC inner matrix")
    rho = scipy.linalg.cho_solve((low, True), v @ (y / nu))
    weights = scipy.linalg.solve_triangular(c.T, rho, lower=False)
    c_inv = scipy.linalg.solve_triangular(c, np.eye(u.size), lower=True)
    l_c_inv = scipy.linalg.solve_triangular(low, c_inv, lower=True)
    reduction = c_inv.T @ c_inv - l_c_inv.T @ l_c_inv
    return GpModel(hyper, mode, u, weights, 0.5 * (reduction + reduction.T), z.size, inducing=u)


def predict_batch(model: GpModel, zs: ArrayLike) -> tuple[NDArray, NDArray, NDArray, NDArray]:
    """Posterior mean, variance and their derivatives at each query point."""
    query = np.atleast_1d(np.asarray(zs, dtype=float))
    if model.is_prior:
        zeros = np.zeros(query.size)
        return zeros, np.full(query.size, model.hyper.sigma_f2), zeros.copy(), zeros.copy()
    k = kernel_matrix(model.hyper, query, model.basis)
    dk = -k * (query[:, None] - model.basis[None, :]) / model.hyper.length_scale**2
    wk = k @ model.reduction
    mean = k @ model.weights
    variance = model.hyper.sigma_f2 - np.sum(wk * k, axis=1)
    d_mean = dk @ model.weights
    d_variance = -2.0 * np.sum(wk * dk, axis=1)
    clamped = variance < 0.0
    variance = np.where(clamped, 0.0, variance)
    d_variance = np.where(clamped, 0.0, d_variance)
    return mean, variance, d_mean, d_variance


def predict(model: GpModel, z: float) -> tuple[float, float]:
    mean, variance, _, _ = predict_batch(model, [z])
    return float(mean[0]), float(variance[0])


def predict_grad(model: GpModel, z: float) -> tuple[float, float, float, float]:
    mean, variance, d_mean, d_variance = predict_batch(model, [z])
    return float(mean[0]), float(variance[0]), float(d_mean[0]), float(d_variance[0])


def select_inducing(trajectory: ArrayLike, M: int, length_scale: float = 0.3) -> NDArray:
    values = np.asarray(trajectory, dtype=float).ravel()
    if M < 1:
        raise InvalidArgument("at least one inducing input is required")
    if values.size == 0:
        raise InvalidArgument("trajectory must be non-empty")
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-6:
        center = 0.5 * (lo + hi)
        lo, hi = center - 0.5 * length_scale, center + 0.5 * length_scale
    if M == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, M)


def select_inducing_time(trajectory: ArrayLike, M: int) -> NDArray:
    values = np.asarray(trajectory, dtype=float).ravel()
    if M < 1 or values.size == 0:
        raise InvalidArgument("need M >= 1 and a non-empty trajectory")
    index = np.round(np.linspace(0, values.size - 1, M)).astype(int)
    return values[index]


def mean_within_bounds(model: GpModel, lower: float, upper: float, grid: ArrayLike) -> bool:
    """True when the posterior mean stays inside the residual-channel bound on the grid."""
    mean, _, _, _ = predict_batch(model, grid)
    return bool(np.all(mean >= lower - 1e-12) and np.all(mean <= upper + 1e-12))


def dataset_to_csv(dataset: GpDataset) -> str:
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(["k", "z", "y"])
    for k, z, y in zip(dataset.steps, dataset.inputs, dataset.targets, strict=True):
        writer.writerow([k, repr(z), repr(y)])
    return output.getvalue()


def import_dataset_csv(path: Path, *, max_points: int = 0) -> GpDataset:
    dataset = GpDataset(max_points=max_points)
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"k", "z", "y"}:
            raise InvalidArgument(f"{path}: expected columns k, z, y")
        for row in reader:
            dataset.append(int(row["k"]), float(row["z"]), float(row["y"]))
    return dataset
