"""Mass-spring-damper plant with an exponential spring and its nominal model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.errors import InvalidArgument
from app.models import PlantSettings


@dataclass(frozen=True)
class PlantParams:
    m: float = 1.0
    c_d: float = 1.0
    c_k: float = 0.33
    Ts: float = 0.1

    def __post_init__(self) -> None:
        for name in ("m", "c_d", "c_k", "Ts"):
            if not getattr(self, name) > 0.0:
                raise InvalidArgument(f"plant parameter {name} must be strictly positive")

    @classmethod
    def from_settings(cls, settings: PlantSettings) -> PlantParams:
        return cls(m=settings.mass, c_d=settings.damping, c_k=settings.spring, Ts=settings.ts)


@dataclass(frozen=True, eq=False)
class DiscreteModel:
    A: NDArray
    Bu: NDArray
    Bg: NDArray
    Ts: float

    @property
    def Bg_pinv(self) -> NDArray:
        return np.linalg.solve(self.Bg.T @ self.Bg, self.Bg.T)


@dataclass(frozen=True, eq=False)
class StateInput:
    x: NDArray
    u: float

    def __post_init__(self) -> None:
        if not (np.all(np.isfinite(self.x)) and np.isfinite(self.u)):
            raise InvalidArgument("state and input must be finite")


def discretize(params: PlantParams) -> DiscreteModel:
    a_c = np.array([[0.0, 1.0], [-params.c_k / params.m, -params.c_d / params.m]])
    b_c = np.array([[0.0], [-1.0 / params.m]])
    bg = np.array([[0.0], [1.0]])
    return DiscreteModel(A=np.eye(2) + params.Ts * a_c, Bu=params.Ts * b_c, Bg=bg, Ts=params.Ts)


def nominal_step(model: DiscreteModel, x: ArrayLike, u: float | ArrayLike) -> NDArray:
    return model.A @ np.asarray(x, dtype=float) + model.Bu @ np.atleast_1d(np.asarray(u, dtype=float))


def nominal_jacobian(model: DiscreteModel, x: ArrayLike, u: float | ArrayLike) -> tuple[NDArray, NDArray]:
    return model.A.copy(), model.Bu.copy()


def continuous_residual(params: PlantParams, x: ArrayLike) -> float:
    x1 = float(np.asarray(x, dtype=float)[0])
    return -(params.c_k / params.m) * (np.exp(-x1) - 1.0) * x1


def true_residual(params: PlantParams, x: ArrayLike) -> float:
    return params.Ts * continuous_residual(params, x)


def continuous_dynamics(params: PlantParams, x: ArrayLike, u: float) -> NDArray:
    state = np.asarray(x, dtype=float)
    spring = params.c_k * np.exp(-state[0]) * state[0]
    return np.array([state[1], -(params.c_d * state[1] + spring + u) / params.m])


def plant_step(
    params: PlantParams,
    x: ArrayLike,
    u: float | ArrayLike,
    v: ArrayLike | None = None,
    *,
    integrator: str = "euler",
    model: DiscreteModel | None = None,
) -> NDArray:
    state = np.asarray(x, dtype=float)
    force = float(np.atleast_1d(u)[0])
    disturbance = np.zeros(2) if v is None else np.asarray(v, dtype=float)
    if integrator == "euler":
        model = model or discretize(params)
        return nominal_step(model, state, force) + model.Bg[:, 0] * true_residual(params, state) + disturbance
    if integrator == "rk4":
        h = params.Ts
        k1 = continuous_dynamics(params, state, force)
        k2 = continuous_dynamics(params, state + 0.5 * h * k1, force)
        k3 = continuous_dynamics(params, state + 0.5 * h * k2, force)
        k4 = continuous_dynamics(params, state + h * k3, force)
        return state + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4) + disturbance
    raise InvalidArgument(f"unknown integrator: {integrator}")


def residual_measurement(model: DiscreteModel, x_next: ArrayLike, x: ArrayLike, u: float | ArrayLike) -> float:
    mismatch = np.asarray(x_next, dtype=float) - nominal_step(model, x, u)
    return float((model.Bg_pinv @ mismatch)[0])


def equilibrium_input(model: DiscreteModel, x: ArrayLike) -> float:
    """Least-squares input holding x (with zero velocity) under the nominal model."""
    state = np.array([float(np.asarray(x, dtype=float)[0]), 0.0])
    u, *_ = np.linalg.lstsq(model.Bu, state - model.A @ state, rcond=None)
    return float(u[0])
