"""Elastic value-of-service MDMA simulator.

Library + CLI implementing the elastic value normalization of heterogeneous
service KPIs, the per-service KPI models (NOMA rate, positioning error bounds,
sensing detection probability), an optimal dynamic-programming solver with a
monotonic-optimization inner stage, a value-prioritized assignment + successive
convex approximation heuristic, and a seeded Monte-Carlo experiment harness.
"""

__version__ = "0.1.0"

from .types import Direction, KpiSpec, RbGrid, ServiceType, SystemParams, UserService
from .scenario import Scenario, ScenarioConfig, generate, path_loss_linear, steering_vector
from .alloc import Assignment, PowerAlloc
from .vosmetric import LOG_FLOOR, LogValue, log_normalize, log_objective, normalize, user_vos, z_min
from . import kpi, cvxcore, modp, sca, harness

__all__ = [
    "Direction", "KpiSpec", "RbGrid", "ServiceType", "SystemParams", "UserService",
    "Scenario", "ScenarioConfig", "generate", "path_loss_linear", "steering_vector",
    "Assignment", "PowerAlloc",
    "LOG_FLOOR", "LogValue", "log_normalize", "log_objective", "normalize",
    "user_vos", "z_min",
    "kpi", "cvxcore", "modp", "sca", "harness",
]
