"""Assignment and power-allocation tensors plus constraint validation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolationError
from .types import ServiceType


@dataclass(frozen=True)
class Assignment:
    """Binary service-to-RB map a[k, m, n]; each service appears at most once."""

    a: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.a, dtype=np.int8))
        arr.flags.writeable = False
        object.__setattr__(self, "a", arr)

    @classmethod
    def empty(cls, scenario):
        grid = scenario.grid
        return cls(np.zeros((scenario.n_users, grid.m_subbands, grid.n_subframes),
                            dtype=np.int8))

    @classmethod
    def from_placements(cls, scenario, placements):
        """Build from {user: (m_idx, n_idx)} with 0-based RB indices."""
        arr = np.zeros((scenario.n_users, scenario.grid.m_subbands,
                        scenario.grid.n_subframes), dtype=np.int8)
        for k, (mi, ni) in placements.items():
            arr[k, mi, ni] = 1
        return cls(arr)

    def rb_of(self, k):
        """0-based (m, n) of user k's RB, or None if unassigned."""
        hits = np.argwhere(self.a[k] == 1)
        if len(hits) == 0:
            return None
        return (int(hits[0][0]), int(hits[0][1]))

    def assigned_users(self):
        return [k for k in range(self.a.shape[0]) if self.a[k].any()]

    def with_move(self, k, mi, ni):
        """Copy with user k moved to RB (mi, ni)."""
        arr = np.array(self.a)
        arr[k] = 0
        arr[k, mi, ni] = 1
        return Assignment(arr)


@dataclass(frozen=True)
class PowerAlloc:
    """BS transmit powers p[k, m, n] in Watts for comm/positioning services.

    Rows of sensing users are ignored by every consumer (their transmit power
    is the per-user constant held on the scenario).
    """

    p: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(np.asarray(self.p, dtype=float))
        arr.flags.writeable = False
        object.__setattr__(self, "p", arr)

    @classmethod
    def zeros(cls, scenario):
        grid = scenario.grid
        return cls(np.zeros((scenario.n_users, grid.m_subbands, grid.n_subframes)))


def validate_assignment(scenario, a, require_complete=False, atol=0):
    """Check the cap and uniqueness constraints; raises on violation."""
    arr = np.asarray(getattr(a, "a", a))
    per_user = arr.sum(axis=(1, 2))
    if np.any(per_user > 1):
        raise ConstraintViolationError("some service assigned to more than one RB")
    if require_complete and np.any(per_user != 1):
        missing = np.nonzero(per_user == 0)[0].tolist()
        raise ConstraintViolationError(f"services {missing} unassigned")
    per_rb = arr.sum(axis=0)
    if np.any(per_rb > scenario.params.a_max):
        raise ConstraintViolationError(
            f"per-RB cap {scenario.params.a_max} exceeded (max {int(per_rb.max())})")


def power_residuals(scenario, a, p):
    """Worst-case violations of the power constraints for (a, p).

    Returns a dict of nonnegative residuals: budget (per sub-frame sum over
    BS-powered users vs the cap), box (bounds 0 <= p <= a * P_max), and the
    power-ordering fairness inequalities between co-assigned comm users.
    """
    arr = np.asarray(getattr(a, "a", a))
    pw = np.asarray(getattr(p, "p", p), dtype=float)
    params = scenario.params
    bs = list(scenario.bs_powered_indices)
    budget = 0.0
    if bs:
        per_frame = pw[bs].sum(axis=(0, 1))
        budget = max(0.0, float(per_frame.max() - params.p_max_w))
    box = 0.0
    if bs:
        box = max(0.0, float((-pw[bs]).max()))
        box = max(box, float((pw[bs] - arr[bs] * params.p_max_w).max()))
    fairness = 0.0
    chic = scenario.coeffs.chi_comm
    comm = list(scenario.comm_indices)
    for mi in range(scenario.grid.m_subbands):
        for ni in range(scenario.grid.n_subframes):
            in_rb = [k for k in comm if arr[k, mi, ni]]
            for k in in_rb:
                for ji, j in enumerate(in_rb):
                    for q in in_rb[ji + 1:]:
                        lhs = pw[q, mi, ni] * chic[k, q, mi, ni]
                        rhs = pw[j, mi, ni] * chic[k, j, mi, ni]
                        fairness = max(fairness, rhs - lhs)
    return {"budget": budget, "box": box, "fairness": fairness}


def check_power(scenario, a, p, tol=1e-8):
    res = power_residuals(scenario, a, p)
    worst = max(res.values())
    if worst > tol * max(1.0, scenario.params.p_max_w):
        raise ConstraintViolationError(f"power constraints violated: {res}")
    return res
