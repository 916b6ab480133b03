"""Constants for the AGV cost estimation package."""
from __future__ import annotations

# Package Constants
DOMAIN = "agv_cost_estimation"
DEFAULT_AGV = "agv1"
DEFAULT_SEED = 42

# Debug and Logging
DEBUG_PREFIX = DOMAIN
LOG_LEVELS = {
    "error": "ERROR",
    "warning": "WARNING",
    "info": "INFO",
    "debug": "DEBUG",
}

# Time unit: seconds, epoch 0 at mission start
DEFAULT_SAMPLING_INTERVAL = 20.0
DEFAULT_V_MAX = 0.2  # m/s

# Battery (fraction of life, state of charge)
DEFAULT_T_EMPTY = 7500.0
DEFAULT_BATTERY_KNOTS = (
    (0.0, 1.0),
    (0.05, 0.93),
    (0.80, 0.88),
    (0.95, 0.30),
    (1.0, 0.0),
)

# Ground-truth cost model
DEFAULT_NOISE_FRACTION = 0.02  # of base_time
DEFAULT_HALT_SOC = 0.05
ARC_KIND_CORRIDOR = "corridor"
ARC_KIND_PORT_APPROACH = "port-approach"
ARC_KINDS = (ARC_KIND_CORRIDOR, ARC_KIND_PORT_APPROACH)
DEFAULT_FRICTION = {
    ARC_KIND_CORRIDOR: 1.0,
    ARC_KIND_PORT_APPROACH: 1.15,
}

# Speed response s(SoC), see agv_sim.SpeedResponse
DEFAULT_SPEED_PEAK = 1.0
DEFAULT_RUN_IN_SOC = 0.93
DEFAULT_RUN_IN_DROP = 0.02
DEFAULT_SAG_HIGH = 0.70
DEFAULT_SAG_LOW = 0.35
DEFAULT_SAG_DEPTH = 0.05
DEFAULT_COLLAPSE_SOC = 0.06
DEFAULT_SPEED_FLOOR = 0.05

# Estimators
METHOD_LSMW = "lsmw"
METHOD_RLS = "rls"
METHOD_RLS_ADAPTIVE = "rls-adaptive"
METHOD_KF = "kf"
# Report order, also the winner tie-break order
METHOD_ORDER = (METHOD_LSMW, METHOD_RLS, METHOD_RLS_ADAPTIVE, METHOD_KF)

DEFAULT_WINDOW = 5
# Estimates kept per online estimator for inspection
DEFAULT_HISTORY = 256
DEFAULT_LAMBDA = 0.7
DEFAULT_P0 = 1e8
DEFAULT_ALPHA1 = 0.5
DEFAULT_ALPHA2 = 10.0
ALPHA3_SCALE_FRACTION = 0.01  # of the running observation scale
DEFAULT_KF_CALIBRATION = 20
DEFAULT_KF_Q_RATIO = 0.02  # Q = R / 50
KF_R_FLOOR = 1e-12
WINNER_TIE_TOLERANCE = 1e-9

# Method templates (settings section name, label, parameters)
METHOD_TEMPLATES = {
    METHOD_LSMW: {
        "section": "lsmw",
        "name": "Least squares moving window",
        "params": ("window",),
    },
    METHOD_RLS: {
        "section": "rls",
        "name": "Recursive least squares, constant forgetting",
        "params": ("lambda", "p0"),
    },
    METHOD_RLS_ADAPTIVE: {
        "section": "rls_adaptive",
        "name": "Recursive least squares, adaptive forgetting",
        "params": ("alpha1", "alpha2", "alpha3", "p0"),
    },
    METHOD_KF: {
        "section": "kf",
        "name": "Kalman filter (random walk)",
        "params": ("q", "r", "calibration", "q_ratio"),
    },
}

# Settings keys whose MethodConfig field has another name
METHOD_FIELD_NAMES = {"lambda": "lam"}

# Traffic graph and planning
COST_FLOOR = 1e-3  # seconds
DEFAULT_K_CANDIDATES = 32
COST_TIE_REL_TOL = 1e-9

# Missions
DEFAULT_MISSION_METHOD = METHOD_KF
DEFAULT_WARMUP_TRAVERSALS = 0
DEFAULT_WARMUP_INTERVAL = 5.0
DEFAULT_MISSION_LEGS = 1
BATTERY_AGE_NEW = "new"
BATTERY_AGE_DRAINED = "drained"
DEFAULT_BATTERY_AGE = {
    BATTERY_AGE_NEW: 0.25,
    BATTERY_AGE_DRAINED: 0.96,
}

# CSV schemas
SERIES_HEADER = ("t", "arc", "agv", "duration")
ESTIMATE_HEADER = ("t", "observed", "predicted", "residual")
COMPARE_HEADER = (
    "method",
    "count",
    "mean",
    "std",
    "rmse",
    "max_abs",
    "mean_abs",
    "tracking_rmse",
)
MISSION_HEADER = (
    "step",
    "t",
    "agv",
    "arc",
    "planned",
    "actual",
    "route_change",
    "route",
)

# Exit codes
EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_MISSION_ABORTED = 3
