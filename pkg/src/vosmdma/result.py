"""Solver output container and the common (assignment, powers) -> report builder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kpi, vosmetric
from .alloc import Assignment, PowerAlloc
from .types import ServiceType
from .vosmetric import LOG_FLOOR, LogValue


@dataclass
class SolveResult:
    """Everything a run produces; internally consistent with (assignment, powers).

    log_objective is the termwise-floored log objective including a LOG_FLOOR
    penalty per unassigned user; exact_log keeps the below-range sentinel.
    """

    algorithm: str
    status: str
    assignment: Assignment
    powers: PowerAlloc
    z: np.ndarray
    log_objective: float
    exact_log: LogValue
    product_vos: float
    user_vos: tuple[float, ...]
    user_kpis: tuple
    wall_ms: float = 0.0
    certified: bool = False
    diagnostics: dict = field(default_factory=dict)

    def vos_mean(self, scenario, service: ServiceType) -> float:
        idx = [u.index for u in scenario.users if u.service is service]
        if not idx:
            return float("nan")
        return float(np.mean([self.user_vos[k] for k in idx]))


def build_result(scenario, algorithm, a, p, *, status="ok", wall_ms=0.0,
                 certified=False, diagnostics=None) -> SolveResult:
    """Evaluate a full solution from scratch so every reported number is
    reproducible from (assignment, powers) alone."""
    assignment = a if isinstance(a, Assignment) else Assignment(np.asarray(a))
    powers = p if isinstance(p, PowerAlloc) else PowerAlloc(np.asarray(p))
    z = kpi.sinr_from_powers(scenario, assignment, powers)

    user_values = []
    user_kpis = []
    exact = 0.0
    floored = 0.0
    for user in scenario.users:
        rb = assignment.rb_of(user.index)
        if rb is None:
            user_values.append(0.0)
            user_kpis.append(None)
            exact = -np.inf
            floored += LOG_FLOOR
            continue
        mi, ni = rb
        qs = kpi.achieved_kpis(scenario, user.index, mi + 1, ni + 1,
                               float(z[user.index, mi, ni]))
        user_kpis.append(qs)
        vals = [(vosmetric.normalize(q, spec), spec.weight)
                for spec, q in zip(user.kpis, qs)]
        user_values.append(vosmetric.user_vos(vals))
        for spec, q in zip(user.kpis, qs):
            if spec.weight == 0.0:
                continue
            term = spec.weight * float(vosmetric.log_value_array(np.float64(q), spec))
            exact += term
            floored += max(term, LOG_FLOOR)

    product = float(np.prod(user_values)) if user_values else 1.0
    return SolveResult(
        algorithm=algorithm, status=status, assignment=assignment, powers=powers,
        z=z, log_objective=float(floored), exact_log=LogValue(float(exact)),
        product_vos=product, user_vos=tuple(user_values), user_kpis=tuple(user_kpis),
        wall_ms=wall_ms, certified=certified, diagnostics=dict(diagnostics or {}))


def infeasible_result(scenario, algorithm, reason) -> SolveResult:
    a = Assignment.empty(scenario)
    p = PowerAlloc.zeros(scenario)
    res = build_result(scenario, algorithm, a, p, status="infeasible",
                       diagnostics={"reason": reason})
    return res
