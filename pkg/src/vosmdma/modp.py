"""Optimal solver: dynamic programming over cumulative assigned-service sets,
with a polyblock outer-approximation stage solving each sub-frame power
subproblem to a relative optimality certificate."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .alloc import Assignment, PowerAlloc
from .cvxcore import FeasibilityProblem, feasible_power
from .errors import StateBudgetError
from .result import SolveResult, build_result, infeasible_result
from .subproblem import SubframeProblem

DEFAULT_EPS = 0.05
DEFAULT_BISECT_TOL = 1e-4
DEFAULT_MAX_ITER = 5000
MIN_COORD_FRAC = 1e-6
STATE_BUDGET = 2**20


def enumerate_a_n(prev_set, new_set, scenario):
    """All band placements of the newly assigned services of one sub-frame.

    Yields {user: band_index} dicts in deterministic lexicographic order,
    filtered by the per-RB cap; empty when the delta set cannot fit.
    """
    prev_set, new_set = frozenset(prev_set), frozenset(new_set)
    if not prev_set <= new_set:
        raise ValueError("predecessor state must be a subset of the successor")
    delta = sorted(new_set - prev_set)
    m_cnt = scenario.grid.m_subbands
    a_max = scenario.params.a_max
    if len(delta) > m_cnt * a_max:
        return
    if not delta:
        yield {}
        return
    for bands in itertools.product(range(m_cnt), repeat=len(delta)):
        counts = np.bincount(bands, minlength=m_cnt)
        if counts.max() > a_max:
            continue
        yield dict(zip(delta, bands))


def initial_vertex(scenario, n, placement):
    """Componentwise SNR upper bound for sub-frame n (1-based) under a placement."""
    sub = SubframeProblem(scenario, n - 1, placement)
    return sub.initial_vertex()


@dataclass(frozen=True)
class Projection:
    delta: float
    point: np.ndarray
    p_witness: np.ndarray
    z_witness: np.ndarray  # SNRs induced by the witness powers (>= point)
    upper: float = 1.0     # sound upper bracket on the true scale factor


def project(scenario, n, placement, vertex, bisect_tol=DEFAULT_BISECT_TOL):
    """Radial projection of a vertex onto the feasible-SNR boundary.

    Bisection on the scale factor with the power feasibility LP as oracle,
    down to interval width bisect_tol; the feasible endpoint is returned.
    Whenever a probe is feasible the witness powers' induced SNRs give a
    (possibly much larger) certified-feasible scale, which tightens the lower
    end for free without weakening the contract.
    """
    sub = SubframeProblem(scenario, n - 1, placement)
    return _project(sub, np.asarray(vertex, dtype=float), bisect_tol)


def _feasible(sub, z_vec):
    return feasible_power(FeasibilityProblem(sub=sub, z=z_vec))


def _project(sub, vertex, bisect_tol, caps=None):
    """Bisection projection with two sound accelerations: per-axis caps cut
    provably infeasible probes without an LP call, and each feasible witness's
    induced SNRs certify a (usually much larger) feasible scale."""
    nz = vertex > 0

    def cap_ratio():
        if caps is None or not nz.any():
            return 1.0
        return float(min(1.0, np.min(caps[nz] / vertex[nz])))

    hi_cap = cap_ratio()
    if hi_cap >= 1.0:
        res = _feasible(sub, vertex)
        if res.feasible:
            return Projection(1.0, vertex.copy(), res.p, sub.induced_z(res.p), 1.0)
    lo, hi = 0.0, min(1.0, hi_cap)
    res0 = _feasible(sub, np.zeros_like(vertex))
    p_best = res0.p
    z_best = sub.induced_z(p_best)
    if nz.any():
        jump0 = float(np.min(z_best[nz] / vertex[nz]))
        lo = min(max(lo, jump0), hi - 1e-15)
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        probe = _feasible(sub, mid * vertex)
        if probe.feasible:
            p_best = probe.p
            z_best = sub.induced_z(probe.p)
            jump = float(np.min(z_best[nz] / vertex[nz])) if nz.any() else 1.0
            lo = min(max(mid, jump), hi - 1e-15)
        else:
            hi = mid
    return Projection(lo, lo * vertex, p_best, z_best, hi)


def _axis_caps(sub, z0, bisect_tol):
    """Sound per-coordinate feasible maxima: valid componentwise bounds because
    the feasible SNR region is closed under componentwise decrease. Uses the
    projection's infeasible bracket end, so the caps over-cover, never cut."""
    caps = np.zeros_like(z0)
    for d in range(len(z0)):
        if z0[d] <= 0:
            continue
        unit = np.zeros_like(z0)
        unit[d] = z0[d]
        proj = _project(sub, unit, bisect_tol)
        caps[d] = proj.upper * z0[d]
    return caps


@dataclass
class PolyblockResult:
    value: float          # incumbent floored objective (latency constants included)
    upper_bound: float
    z: np.ndarray         # (K, M) sub-frame slice
    p: np.ndarray         # (K, M) sub-frame slice
    certified: bool
    iterations: int


def polyblock_solve(scenario, n, placement, eps=DEFAULT_EPS, *,
                    bisect_tol=DEFAULT_BISECT_TOL, max_iter=DEFAULT_MAX_ITER,
                    abs_tol=1e-9, prune=True) -> PolyblockResult:
    """Certified maximization of one sub-frame's floored log objective.

    Outer approximation by a shrinking union of boxes: pick the best vertex,
    project it radially onto the feasible boundary, replace it with up to D
    children, keep the best feasible point seen. Terminates when the best
    vertex value is within the relative tolerance of the incumbent. Needs only
    monotonicity of the objective, which holds for every parameterization.
    """
    sub = SubframeProblem(scenario, n - 1, placement)
    dim = sub.dim
    if dim == 0:
        return PolyblockResult(0.0, 0.0, sub.scatter(np.zeros(0)),
                               sub.scatter_power(np.zeros(0)), True, 0)
    z0 = sub.initial_vertex()
    caps = np.minimum(_axis_caps(sub, z0, bisect_tol), z0) if prune else None
    # value terms are flat beyond saturation, so the enclosing box may stop there
    sat = np.minimum(sub.saturation_vector() * (1.0 + 1e-9), z0)
    start = np.minimum(sat, caps) if caps is not None else sat.copy()
    if caps is not None:
        caps = start.copy()

    def coord_terms(d, values):
        return sub.entry_terms(d, np.asarray(values, dtype=float))

    verts = start[None, :].copy()
    gcols = np.array([[float(coord_terms(d, np.float64(start[d]))) for d in range(dim)]])
    objs = gcols.sum(axis=1) + sub.latency_floored

    best_val = -np.inf
    best_z = np.zeros(dim)
    best_p = np.zeros(sub.n_power)
    upper = float(objs[0])
    prune_ceiling = -np.inf
    certified = False
    iters = 0

    def gap(lb):
        return eps * abs(lb) + abs_tol

    while iters < max_iter and verts.shape[0]:
        iters += 1
        j = int(np.argmax(objs))
        vertex = verts[j]
        proj = _project(sub, vertex, bisect_tol, caps)
        cand_z = proj.z_witness
        cand_val = sub.objective(cand_z)
        pp_val = sub.objective(proj.point)
        if pp_val > cand_val:
            cand_z, cand_val = proj.point, pp_val
        if cand_val > best_val:
            best_val, best_z, best_p = cand_val, cand_z.copy(), proj.p_witness.copy()
        if proj.delta >= 1.0:
            # the best vertex itself is feasible: nothing above it remains, so
            # the incumbent from its (polished) witness decides convergence
            upper = min(upper, float(objs[j]))
            certified = upper - best_val <= gap(best_val)
            break

        # any region whose vertex value is inside the certificate band cannot
        # improve the certified answer: discard it and remember the ceiling
        level = best_val + gap(best_val) if prune else best_val
        children, child_g, child_obj = [], [], []
        parent_g = gcols[j]
        parent_obj = objs[j]
        for d in range(dim):
            new_coord = proj.point[d]
            if vertex[d] <= 0 or new_coord < MIN_COORD_FRAC * z0[d]:
                prune_ceiling = max(prune_ceiling, parent_obj)
                continue
            gnew = float(coord_terms(d, np.float64(new_coord)))
            obj_new = parent_obj - parent_g[d] + gnew
            if obj_new <= level:
                prune_ceiling = max(prune_ceiling, obj_new)
                continue
            child = vertex.copy()
            child[d] = new_coord
            children.append(child)
            grow = parent_g.copy()
            grow[d] = gnew
            child_g.append(grow)
            child_obj.append(obj_new)

        keep = np.ones(verts.shape[0], dtype=bool)
        keep[j] = False
        dropped = keep & (objs <= level)
        if dropped.any():
            prune_ceiling = max(prune_ceiling, float(objs[dropped].max()))
            keep &= ~dropped
        verts = verts[keep]
        gcols = gcols[keep]
        objs = objs[keep]
        if children:
            verts = np.vstack([verts, np.array(children)])
            gcols = np.vstack([gcols, np.array(child_g)])
            objs = np.concatenate([objs, np.array(child_obj)])
        new_upper = float(objs.max()) if objs.size else max(prune_ceiling, best_val)
        upper = min(upper, max(new_upper, best_val, prune_ceiling))
        if upper - best_val <= gap(best_val):
            certified = True
            break
    else:
        certified = verts.shape[0] == 0

    upper = max(upper, best_val)
    if certified:
        upper = min(upper, best_val + gap(best_val))
    return PolyblockResult(
        value=float(best_val), upper_bound=float(upper),
        z=sub.scatter(best_z), p=sub.scatter_power(best_p),
        certified=certified, iterations=iters)


def _subsets_capped(items, cap):
    for r in range(min(len(items), cap) + 1):
        yield from itertools.combinations(items, r)


def modp_solve(scenario, eps=DEFAULT_EPS, *, state_budget=STATE_BUDGET,
               bisect_tol=DEFAULT_BISECT_TOL, trace_path=None) -> SolveResult:
    """Exact solver: optimal substructure over cumulative assigned-service sets.

    Stage n extends the assigned set by at most one sub-frame's capacity; each
    transition's value is the certified sub-frame optimum over all band
    placements of the delta set. The per-stage upper bounds run through the
    same recursion, giving a sound global certificate interval.
    """
    k_total = scenario.n_users
    grid = scenario.grid
    cap_frame = grid.m_subbands * scenario.params.a_max
    n_frames = grid.n_subframes
    if k_total > cap_frame * n_frames:
        return infeasible_result(
            scenario, "MODP",
            f"{k_total} services exceed total RB capacity {cap_frame * n_frames}")

    full = frozenset(range(k_total))
    trace = open(trace_path, "w", encoding="utf-8") if trace_path else None
    poly_cache: dict = {}
    # tables[stage]: state set -> (value, upper_bound, back)
    # back = (prev_state, placement, poly, cache_key); None at stage 0
    tables = [{frozenset(): (0.0, 0.0, None)}]
    state_count = 1

    try:
        for stage in range(1, n_frames + 1):
            nxt: dict = {}
            remaining_capacity = (n_frames - stage) * cap_frame
            for prev, (val_prev, ub_prev, _) in tables[stage - 1].items():
                for delta in _subsets_capped(sorted(full - prev), cap_frame):
                    new = prev | frozenset(delta)
                    if k_total - len(new) > remaining_capacity:
                        continue
                    best = None  # (value, key, poly, placement) for this (prev, new)
                    ub_pair = -np.inf
                    for placement in enumerate_a_n(prev, new, scenario):
                        key = (stage, tuple(sorted(placement.items())))
                        if key not in poly_cache:
                            poly_cache[key] = polyblock_solve(
                                scenario, stage, placement, eps,
                                bisect_tol=bisect_tol)
                        poly = poly_cache[key]
                        ub_pair = max(ub_pair, poly.upper_bound)
                        if trace:
                            trace.write(
                                f"n={stage} prev={sorted(prev)} new={sorted(new)} "
                                f"a={placement} dU={poly.value:.6g} "
                                f"iters={poly.iterations} cert={poly.certified}\n")
                        if best is None or poly.value > best[0] or (
                                poly.value == best[0] and key < best[1]):
                            best = (poly.value, key, poly, placement)
                    if best is None:
                        continue
                    value = val_prev + best[0]
                    upper = ub_prev + ub_pair
                    cur = nxt.get(new)
                    if cur is None:
                        nxt[new] = (value, upper, (prev, best[3], best[2], best[1]))
                    else:
                        new_upper = max(upper, cur[1])
                        if value > cur[0] or (value == cur[0] and best[1] < cur[2][3]):
                            nxt[new] = (value, new_upper,
                                        (prev, best[3], best[2], best[1]))
                        else:
                            nxt[new] = (cur[0], new_upper, cur[2])
            state_count += len(nxt)
            if state_count > state_budget:
                raise StateBudgetError(
                    f"DP state budget {state_budget} exceeded at stage {stage}")
            tables.append(nxt)
            if not nxt:
                break
    finally:
        if trace:
            trace.close()

    if len(tables) <= n_frames or full not in tables[n_frames]:
        return infeasible_result(scenario, "MODP", "no complete assignment path found")

    value, upper, _ = tables[n_frames][full]
    a_arr = np.zeros((k_total, grid.m_subbands, n_frames), dtype=np.int8)
    p_arr = np.zeros((k_total, grid.m_subbands, n_frames))
    cur = full
    path = []
    for stage in range(n_frames, 0, -1):
        _, _, back = tables[stage][cur]
        prev, placement, poly, _key = back
        path.append((stage, placement, poly))
        cur = prev
    certified = True
    for stage, placement, poly in path:
        ni = stage - 1
        for k, mi in placement.items():
            a_arr[k, mi, ni] = 1
        p_arr[:, :, ni] = poly.p
        certified = certified and poly.certified

    return build_result(scenario, "MODP", Assignment(a_arr), PowerAlloc(p_arr),
                        certified=certified,
                        diagnostics={"dp_value": value, "dp_upper_bound": upper,
                                     "inner_solves": len(poly_cache),
                                     "states": state_count})
