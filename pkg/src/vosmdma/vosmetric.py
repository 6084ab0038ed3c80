"""Elastic value normalization, per-user value aggregation, the log objective,
and the per-service SNR thresholds below which value is exactly zero."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConstraintViolationError, InvalidSpecError
from .types import Direction, KpiSpec, ServiceType

# Finite stand-in for log(0) KPI terms inside solvers. Reporting always keeps
# the exact below-range sentinel; the floor only keeps iterative methods in
# finite arithmetic without changing any argmax at the scales simulated here.
LOG_FLOOR = -1e6


@dataclass(frozen=True)
class LogValue:
    """Extended-real log of a product of normalized values.

    value is the exact log (always <= 0); -inf encodes "below range", i.e. the
    underlying product is exactly zero.
    """

    value: float

    @property
    def below_range(self) -> bool:
        return not math.isfinite(self.value)

    def floored(self, floor: float = LOG_FLOOR) -> float:
        return max(self.value, floor)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _log_sigmoid_diff(x, y):
    """log(sigmoid(x) - sigmoid(y)) for x > y, stable when x is close to y."""
    return x + np.log(-np.expm1(np.minimum(y - x, -1e-300))) - _softplus(x) - _softplus(y)


def log_normalize(q, spec: KpiSpec) -> LogValue:
    """Log of the normalized value of achieved KPI level q under spec.

    Returns the below-range sentinel when the value is exactly zero.
    """
    return LogValue(float(log_value_array(np.asarray(q, dtype=float), spec)))


def log_value_array(q, spec: KpiSpec):
    """Vectorized exact log normalized value; -inf where the value is zero.

    The middle branch is evaluated through logistic-difference logs so values
    arbitrarily close to the zero threshold keep full relative accuracy.
    """
    q = np.asarray(q, dtype=float)
    a = spec.alpha
    t = spec.target
    if spec.direction is Direction.HIGH:
        x0 = a * (spec.beta - 1.0)
        x = a * (q / t - 1.0)
        mid = (q > spec.beta * t) & (q < t)
        out = np.where(q >= t, 0.0, -np.inf)
        if np.any(mid):
            xm = x[mid] if x.ndim else x
            val = a * (_log_sigmoid_diff(xm, x0) - _log_sigmoid_diff(0.0, x0))
            if x.ndim:
                out = np.asarray(out, dtype=float)
                out[mid] = val
            else:
                out = val
    else:
        x1 = a * (1.0 / spec.beta - 1.0)
        x = a * (q / t - 1.0)
        mid = (q > t) & (q < t / spec.beta)
        out = np.where(q <= t, 0.0, -np.inf)
        if np.any(mid):
            xm = x[mid] if x.ndim else x
            val = a * (_log_sigmoid_diff(-xm, -x1) - _log_sigmoid_diff(0.0, -x1))
            if x.ndim:
                out = np.asarray(out, dtype=float)
                out[mid] = val
            else:
                out = val
    return out if q.ndim else np.float64(out)


def normalize(q, spec: KpiSpec) -> float:
    """Normalized value in [0, 1] of achieved KPI level q under spec.

    Exactly 1.0 at-or-beyond the target and exactly 0.0 at-or-beyond the
    beta range threshold; continuous at both breakpoints.
    """
    q = float(q)
    if q < 0:
        raise ValueError(f"achieved KPI must be nonnegative, got {q}")
    if spec.direction is Direction.HIGH:
        if q >= spec.target:
            return 1.0
        if q <= spec.beta * spec.target:
            return 0.0
    else:
        if q <= spec.target:
            return 1.0
        if q >= spec.target / spec.beta:
            return 0.0
    return float(np.exp(log_value_array(np.float64(q), spec)))


def d_log_value_dq(q, spec: KpiSpec) -> float:
    """Derivative of the log normalized value w.r.t. the achieved KPI.

    Zero on the saturated branch; undefined (returned as 0) below range.
    """
    q = float(q)
    a = spec.alpha
    t = spec.target
    if spec.direction is Direction.HIGH:
        if not spec.beta * t < q < t:
            return 0.0
        x0 = a * (spec.beta - 1.0)
        x = a * (q / t - 1.0)
        s = 1.0 / (1.0 + np.exp(-x))
        diff = np.exp(_log_sigmoid_diff(x, x0))
        return float(a * a * s * (1.0 - s) / (t * diff))
    if not t < q < t / spec.beta:
        return 0.0
    x1 = a * (1.0 / spec.beta - 1.0)
    x = a * (q / t - 1.0)
    s = 1.0 / (1.0 + np.exp(x))
    diff = np.exp(_log_sigmoid_diff(-x, -x1))
    return float(-a * a * s * (1.0 - s) / (t * diff))


def user_vos(values_and_weights) -> float:
    """Weighted-proportional aggregate of normalized values: prod v_i ** w_i.

    0**0 is treated as 1 so zero-weight KPIs are neutral; any zero value with
    positive weight makes the aggregate zero.
    """
    out = 1.0
    for v, w in values_and_weights:
        if not 0.0 <= v <= 1.0 + 1e-12:
            raise ValueError(f"normalized value {v} outside [0,1]")
        if w < 0:
            raise ValueError(f"negative weight {w}")
        if v == 0.0:
            if w > 0:
                return 0.0
            continue  # 0**0 == 1
        out *= v**w
    return out


def z_min(scenario, k, m, n, assigned=True) -> float:
    """Lower SNR threshold at which user k's value on RB (m, n) leaves zero.

    Zero when the service is not assigned there, and clamped at zero when the
    range threshold is unreachable (the value is positive for every z >= 0).
    Indices m, n are 1-based.
    """
    if not assigned:
        return 0.0
    user = scenario.users[k]
    if user.service is ServiceType.COMM:
        spec = user.kpis[0]
        return max(2.0 ** (spec.beta * spec.target) - 1.0, 0.0)
    if user.service is ServiceType.POS:
        from . import kpi  # local import: kpi depends on scenario data only

        consts = kpi.crb_constants(scenario, k, m, n)
        best = 0.0
        for i, numerator in enumerate(consts.as_tuple()):
            spec = user.kpis[i]
            best = max(best, spec.beta * numerator / spec.target)
        return best
    # sensing: invert the detection curve at the zero-value level
    from . import kpi

    spec = user.kpis[0]
    level = spec.beta * spec.target
    if level >= 1.0:
        raise InvalidSpecError(
            f"sensing user {k}: beta*target = {level} is not a probability below 1"
        )
    w_fa = kpi.chi2_inv(1.0 - user.false_alarm)
    denom = kpi.chi2_inv(1.0 - level)
    return max(w_fa / denom - 1.0, 0.0)


def z_min_vector(scenario, a) -> np.ndarray:
    """Per-(k, m, n) zero-value thresholds; zero on unassigned entries."""
    arr = np.asarray(getattr(a, "a", a))
    grid = scenario.grid
    out = np.zeros_like(arr, dtype=float)
    for k in range(len(scenario.users)):
        for m in range(grid.m_subbands):
            for n in range(grid.n_subframes):
                if arr[k, m, n]:
                    out[k, m, n] = z_min(scenario, k, m + 1, n + 1)
    return out


@dataclass(frozen=True)
class ObjectiveValue:
    """Exact log objective plus its termwise-floored finite surrogate."""

    exact: LogValue
    floored: float


def log_objective(scenario, a, z) -> ObjectiveValue:
    """Sum of weighted log normalized KPI values over all assigned services.

    Rate / estimation-variance / detection KPIs are mapped from the auxiliary
    SNR tensor z; latency KPIs depend only on the assigned sub-frame. Any
    below-range term makes the exact total the below-range sentinel; the
    floored surrogate clamps each weighted term at LOG_FLOOR.
    """
    from . import kpi

    arr = np.asarray(getattr(a, "a", a))
    zarr = np.asarray(getattr(z, "z", z), dtype=float)
    grid = scenario.grid
    if arr.shape != (len(scenario.users), grid.m_subbands, grid.n_subframes):
        raise ConstraintViolationError(f"assignment tensor has shape {arr.shape}")
    counts = arr.sum(axis=(1, 2))
    if np.any(counts > 1):
        raise ConstraintViolationError("a service is assigned to more than one RB")
    if np.any(arr.sum(axis=0) > scenario.params.a_max):
        raise ConstraintViolationError("per-RB service cap exceeded")
    if np.any(zarr < 0):
        raise ValueError("auxiliary SNR entries must be nonnegative")

    exact = 0.0
    floored = 0.0
    for k, m, n in zip(*np.nonzero(arr)):
        user = scenario.users[k]
        qs = kpi.achieved_kpis(scenario, k, int(m) + 1, int(n) + 1, zarr[k, m, n])
        for spec, q in zip(user.kpis, qs):
            if spec.weight == 0.0:
                continue  # 0**0 convention: zero-weight KPIs are neutral
            term = spec.weight * float(log_value_array(np.float64(q), spec))
            exact += term
            floored += max(term, LOG_FLOOR)
    return ObjectiveValue(LogValue(float(exact)), float(floored))
