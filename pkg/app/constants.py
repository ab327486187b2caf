APP_TITLE = "dual-gpmpc"
APP_VERSION = "1.0.0"

CONTROLLER_RMPC = "rmpc"
CONTROLLER_SINGLE_HORIZON = "single_horizon_active"
CONTROLLER_PASSIVE = "passive_contingency"
CONTROLLER_ACTIVE = "active_contingency"
CONTROLLERS = (CONTROLLER_RMPC, CONTROLLER_SINGLE_HORIZON, CONTROLLER_PASSIVE, CONTROLLER_ACTIVE)
LEARNING_CONTROLLERS = {CONTROLLER_SINGLE_HORIZON, CONTROLLER_PASSIVE, CONTROLLER_ACTIVE}
ACTIVE_CONTROLLERS = {CONTROLLER_SINGLE_HORIZON, CONTROLLER_ACTIVE}
CONTROLLER_LABELS = {
    CONTROLLER_RMPC: "RMPC",
    CONTROLLER_SINGLE_HORIZON: "Single-horizon active",
    CONTROLLER_PASSIVE: "Passive contingency",
    CONTROLLER_ACTIVE: "Active contingency",
}

INTEGRATORS = ("euler", "rk4")
TIGHTENING_GAINS = ("lqr", "zero")
DISTURBANCE_SCALINGS = ("sampled", "verbatim")
GP_MODES = ("exact", "sparse")
INDUCING_RULES = ("feature", "time")

# Numerical constants
GP_JITTER = 1e-8
GP_DUPLICATE_TOL = 1e-6
TIGHTEN_EPS = 1e-9
DARE_MAX_ITER = 10_000
DARE_TOL = 1e-12
RCI_MAX_ITER = 100
RCI_TOL = 1e-9
SOFT_PENALTY = 1e4
QP_ELASTIC_PENALTY = 1e6
BUDGET_EPS = 1e-9
MEAN_CHECK_GRID_POINTS = 50

# Steady-state evaluation instants [s]
EVAL_TIMES = (5.0, 10.0)
REFERENCE_SOLVE_S = 0.295

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_NUMERICAL = 3

LOG_ENV_VAR = "DUAL_GPMPC_LOG"
LOG_LEVELS = {"DEBUG": 10, "INFO": 20, "WARN": 30, "ERROR": 40}

SIM_LOG_FIELDS = (
    "k",
    "t",
    "x1",
    "x2",
    "u",
    "status",
    "solve_time",
    "J",
    "J_B",
    "delta",
    "Y",
    "H",
    "gp_size",
    "max_sigma_x",
    "slack",
    "mean_in_w",
)
METRIC_FIELDS = (
    "controller",
    "e_ss_5s_pct",
    "e_ss_10s_pct",
    "max_violation",
    "mean_solve_ms",
    "max_solve_ms",
    "cum_J",
    "cum_Delta",
)
