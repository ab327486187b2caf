from __future__ import annotations

import math
from dataclasses import dataclass, field

from app.constants import CONTROLLER_ACTIVE


@dataclass
class PlantSettings:
    mass: float = 1.0
    damping: float = 1.0
    spring: float = 0.33
    ts: float = 0.1
    integrator: str = "euler"
    noise: tuple[float, float] | None = None


@dataclass
class MpcSettings:
    horizon: int = 20
    q: tuple[float, ...] = (20.0, 1.0)
    r: float = 1.0
    contingency_weight: float = 1e-3
    x_lower: tuple[float, ...] = (-0.1, -5.0)
    x_upper: tuple[float, ...] = (1.1, 5.0)
    u_lower: tuple[float, ...] = (-5.0,)
    u_upper: tuple[float, ...] = (5.0,)
    w_lower: tuple[float, ...] = (0.0, -0.31)
    w_upper: tuple[float, ...] = (0.0, 0.31)
    disturbance_scaling: str = "sampled"
    tightening_gain: str = "lqr"
    soft_penalty: float = 1e4


@dataclass
class GpSettings:
    sigma_f2: float = 0.33
    length_scale: float = 0.3
    sigma_v2: float = 0.0
    jitter: float = 1e-8
    mode: str = "exact"
    inducing_points: int = 4
    inducing: str = "feature"
    refit_every: int = 1
    max_points: int = 0


@dataclass
class LearningSettings:
    beta_bar: float = 1.0
    gamma_bar: float = 0.0
    beta_max: float = 0.0
    gamma_max: float = math.inf


@dataclass
class SimSettings:
    duration: float = 10.0
    x0: tuple[float, ...] = (0.0, 0.0)
    setpoints: tuple[tuple[float, tuple[float, ...]], ...] = ((0.0, (1.0, 0.0)), (5.0, (1.095, 0.0)))
    controller: str = CONTROLLER_ACTIVE
    seed: int = 0
    workers: int = 4


@dataclass
class SolverSettings:
    max_iter: int = 200
    kkt_tol: float = 1e-6
    feas_tol: float = 1e-8
    qp_elastic_penalty: float = 1e6
    verify_derivatives: bool = False
    trace: bool = False


@dataclass
class ScenarioConfig:
    plant: PlantSettings = field(default_factory=PlantSettings)
    mpc: MpcSettings = field(default_factory=MpcSettings)
    gp: GpSettings = field(default_factory=GpSettings)
    learning: LearningSettings = field(default_factory=LearningSettings)
    sim: SimSettings = field(default_factory=SimSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)

    @property
    def n_steps(self) -> int:
        return round(self.sim.duration / self.plant.ts)

    def setpoint_at(self, t: float) -> tuple[float, ...]:
        current = self.sim.setpoints[0][1]
        for start, value in self.sim.setpoints:
            if t + 1e-9 >= start:
                current = value
        return current


@dataclass
class SimRecord:
    k: int
    t: float
    x1: float
    x2: float
    u: float
    status: str = ""
    solve_time: float = 0.0
    J: float = math.nan
    J_B: float = math.nan
    delta: float = 0.0
    Y: float = 0.0
    H: float = math.nan
    gp_size: int = 0
    max_sigma_x: float = 0.0
    slack: float = 0.0
    mean_in_w: bool = True
    x_ref: tuple[float, ...] = ()
    contingency_feasible: bool = True
    terminal_in_set: bool = True
    budget_c: float = math.inf
    budget_d: float = math.inf

    def as_row(self) -> dict[str, object]:
        return {
            "k": self.k,
            "t": self.t,
            "x1": self.x1,
            "x2": self.x2,
            "u": self.u,
            "status": self.status,
            "solve_time": self.solve_time,
            "J": self.J,
            "J_B": self.J_B,
            "delta": self.delta,
            "Y": self.Y,
            "H": self.H,
            "gp_size": self.gp_size,
            "max_sigma_x": self.max_sigma_x,
            "slack": self.slack,
            "mean_in_w": int(self.mean_in_w),
        }


@dataclass
class SimLog:
    controller: str
    records: list[SimRecord] = field(default_factory=list)
    final_state: tuple[float, ...] | None = None
    final_time: float = 0.0
    error: str = ""
    error_kind: str = ""
    trace: list[dict[str, object]] = field(default_factory=list)
    # learned (k, z, y) samples as CSV text, empty for RMPC
    gp_dataset: str = ""

    @property
    def completed(self) -> bool:
        return not self.error


@dataclass
class Metrics:
    controller: str
    e_ss_5s_pct: float
    e_ss_10s_pct: float
    max_violation: float
    mean_solve_ms: float
    max_solve_ms: float
    cum_J: float
    cum_Delta: float

    def as_dict(self) -> dict[str, object]:
        return {
            "controller": self.controller,
            "e_ss_5s_pct": self.e_ss_5s_pct,
            "e_ss_10s_pct": self.e_ss_10s_pct,
            "max_violation": self.max_violation,
            "mean_solve_ms": self.mean_solve_ms,
            "max_solve_ms": self.max_solve_ms,
            "cum_J": self.cum_J,
            "cum_Delta": self.cum_Delta,
        }
