"""Suboptimal solver: value-prioritized assignment under a distance-based
fixed power split, then joint swap + successive convexification refinement."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alloc import Assignment, PowerAlloc
from .cvxcore import solve_p4_subframe
from .result import SolveResult, build_result
from .subproblem import SubframeProblem, placement_from_assignment
from .vosmetric import LOG_FLOOR, log_value_array

DEFAULT_EPS_BAR = 1e-4
SCA_ITER_CAP = 50


def fixed_power(scenario, a, m, n):
    """Distance-proportional power split for RB (m, n), 1-based indices.

    Each BS-powered service assigned there gets distance/total-distance of the
    budget, where the total runs over every BS-powered service in the whole
    sub-frame; sensing users get nothing. Returns a length-K vector.
    """
    arr = np.asarray(getattr(a, "a", a))
    out = np.zeros(scenario.n_users)
    denom = 0.0
    for k in scenario.bs_powered_indices:
        denom += scenario.users[k].distance_m * float(arr[k, :, n - 1].sum())
    if denom == 0.0:
        return out
    for k in scenario.bs_powered_indices:
        if arr[k, m - 1, n - 1]:
            out[k] = scenario.users[k].distance_m * scenario.params.p_max_w / denom
    return out


def fixed_power_tensor(scenario, a) -> np.ndarray:
    """Full (K, M, N) distance-based allocation."""
    arr = np.asarray(getattr(a, "a", a))
    out = np.zeros(arr.shape, dtype=float)
    for n in range(1, scenario.grid.n_subframes + 1):
        for m in range(1, scenario.grid.m_subbands + 1):
            out[:, m - 1, n - 1] = fixed_power(scenario, arr, m, n)
    return out


# --- value-prioritized assignment ---------------------------------------------


def _fixed_power_vec(sub: SubframeProblem):
    """Distance-proportional powers in the sub-frame's own power coordinates."""
    sc = sub.scenario
    denom = sum(sc.users[e.k].distance_m for e in sub.entries if e.pvar is not None)
    p = np.zeros(sub.n_power)
    if denom == 0.0:
        return p
    for e in sub.entries:
        if e.pvar is not None:
            p[e.pvar] = sc.users[e.k].distance_m * sc.params.p_max_w / denom
    return p


def _rb_score(scenario, ni, placement, mi):
    """Floored log value of band mi's members under the fixed power split."""
    sub = SubframeProblem(scenario, ni, placement)
    z = sub.induced_z(_fixed_power_vec(sub))
    total = 0.0
    for e in sub.entries:
        if e.mi != mi:
            continue
        total += float(sub.entry_terms(e.coord, np.float64(z[e.coord])))
        lat_spec = scenario.users[e.k].kpis[-1]
        if lat_spec.weight > 0:
            term = lat_spec.weight * float(
                log_value_array(np.float64(sub._latency), lat_spec))
            total += max(term, LOG_FLOOR)
    return total


def vos_prioritized_assignment(scenario, seed=0) -> Assignment:
    """Greedy capacity-phased placement by achievable value under fixed power.

    Phase A lets each RB hold up to A services. Unmatched services are drawn in
    seeded random order; each evaluates its admissible RBs: free RBs score the
    membership with the candidate inserted, full RBs score their best
    single-service swap against the status quo and turn the candidate away
    (with an exclusion mark) when no swap improves. The candidate joins the
    best-scoring RB; a swapped-out service returns to the pool and is excluded
    from that RB for the rest of the phase. Capacity shortfalls leave services
    unassigned rather than failing.
    """
    rng = np.random.default_rng(seed)
    grid = scenario.grid
    k_total = scenario.n_users
    rbs = [(mi, ni) for ni in range(grid.n_subframes) for mi in range(grid.m_subbands)]
    members: dict = {rb: [] for rb in rbs}
    unmatched = set(range(k_total))

    def subframe_placement(ni, override_rb=None, override_members=None):
        placement = {}
        for (mi2, ni2), ms in members.items():
            if ni2 != ni:
                continue
            use = override_members if override_rb == (mi2, ni2) else ms
            for q in use:
                placement[q] = mi2
        return placement

    for phase in range(1, scenario.params.a_max + 1):
        avail = {k: set(rbs) for k in range(k_total)}
        floor_count = max(k_total - phase * grid.m_subbands * grid.n_subframes, 0)
        queue: list = []
        while len(unmatched) > floor_count:
            if not queue:
                ready = sorted(k for k in unmatched if avail[k])
                if not ready:
                    break
                queue = [int(x) for x in rng.permutation(ready)]
            k = queue.pop(0)
            if k not in unmatched or not avail[k]:
                continue
            candidates = []  # (score, rb, new_members, swapped_out)
            for rb in rbs:
                if rb not in avail[k]:
                    continue
                mi, ni = rb
                cur = members[rb]
                if len(cur) < phase:
                    tentative = cur + [k]
                    score = _rb_score(scenario, ni,
                                      subframe_placement(ni, rb, tentative), mi)
                    candidates.append((score, rb, tentative, None))
                else:
                    # full RB: the candidate may only displace one member; the
                    # over-capacity score of everyone together is the bar a
                    # displacement has to clear
                    squeeze = _rb_score(scenario, ni,
                                        subframe_placement(ni, rb, cur + [k]), mi)
                    best_swap = None
                    for j in cur:
                        swapped = [q for q in cur if q != j] + [k]
                        score = _rb_score(scenario, ni,
                                          subframe_placement(ni, rb, swapped), mi)
                        if best_swap is None or score > best_swap[0]:
                            best_swap = (score, j, swapped)
                    if best_swap is None or squeeze > best_swap[0]:
                        avail[k].discard(rb)
                    else:
                        avail[best_swap[1]].discard(rb)
                        candidates.append((best_swap[0], rb, best_swap[2],
                                           best_swap[1]))
            if not candidates:
                continue
            best = max(candidates, key=lambda c: (c[0], (-c[1][1], -c[1][0])))
            _, rb, new_members, swapped_out = best
            members[rb] = new_members
            unmatched.discard(k)
            if swapped_out is not None:
                unmatched.add(swapped_out)

    placements = {}
    for (mi, ni), ms in members.items():
        for k in ms:
            placements[k] = (mi, ni)
    return Assignment.from_placements(scenario, placements)


# --- SCA power allocation -------------------------------------------------------


@dataclass
class SubframeSolution:
    placement: dict
    p_vec: np.ndarray
    z_vec: np.ndarray
    objective: float
    below_range: bool
    trace: list = field(default_factory=list)
    stationarity: float = 0.0


def _in_range(sub, z_vec):
    return all(
        np.isfinite(float(sub.entry_terms(e.coord, np.float64(z_vec[e.coord]),
                                          floored=False)))
        for e in sub.entries)


def _solve_subframe_sca(scenario, ni, placement, eps_bar, iter_cap) -> SubframeSolution:
    """Fixed-power anchor, then convexified ascent steps until improvement stalls.

    The distance split can violate the power-ordering fairness rows (it knows
    nothing about them); such anchors are repaired by shrinking the induced
    SNRs radially to the feasible boundary and restarting from the witness
    powers. An anchor with a service below its zero-value range is re-anchored
    at a power allocation reaching the zero-value SNR floor when one exists
    (the floor is a hard constraint of the ascent step, so anchors are never
    silently clamped upward); only when no power allocation reaches the floor
    does the step keep the fixed powers and report the below-range flag.
    """
    from .cvxcore import FeasibilityProblem, feasible_power
    from .modp import _project  # shared projection machinery; no import cycle

    sub = SubframeProblem(scenario, ni, placement)
    p_fix = _fixed_power_vec(sub)
    z_fix = sub.induced_z(p_fix)
    fair_ok = all(
        float(row @ p_fix)
        <= 1e-9 * max(float(np.abs(row).max()) * scenario.params.p_max_w, 1e-300)
        for row in sub._fairness)
    if fair_ok:
        p_vec, z_vec = p_fix, z_fix
    else:
        proj = _project(sub, z_fix, 1e-4)
        p_vec, z_vec = proj.p_witness, proj.z_witness
    if not _in_range(sub, z_vec) and sub.n_power:
        # every service must clear its zero-value floor for the ascent step to
        # have a usable anchor; ask the feasibility oracle for such powers
        floor = sub.z_min_vector() * (1.0 + 1e-6)
        res = feasible_power(FeasibilityProblem(sub=sub, z=floor))
        if res.feasible:
            p_vec = res.p
            z_vec = np.maximum(sub.induced_z(res.p), floor)
    obj = sub.objective(z_vec)
    trace = [obj]
    if not _in_range(sub, z_vec) or sub.n_power == 0:
        below = not _in_range(sub, z_vec)
        return SubframeSolution(placement, p_fix, z_fix, sub.objective(z_fix),
                                below, [sub.objective(z_fix)])

    stat = 0.0
    for _ in range(iter_cap):
        res = solve_p4_subframe(sub, z_vec, p_vec)
        stat = max(stat, res.stationarity)
        z_next = np.maximum(res.z, sub.induced_z(res.p))
        obj_next = sub.objective(z_next)
        if obj_next < res.objective:
            z_next, obj_next = res.z, res.objective
        if not _in_range(sub, z_next):
            break
        gain = obj_next - obj
        if obj_next > obj:
            p_vec, z_vec, obj = res.p, z_next, obj_next
        trace.append(obj)
        if gain < eps_bar:
            break
    fixed_obj = sub.objective(z_fix)
    if fixed_obj > obj:
        # a fairness-repaired start can end below the raw distance split;
        # the initialization stays the floor of what this step may return
        p_vec, z_vec, obj = p_fix, z_fix, fixed_obj
        trace.append(obj)
    return SubframeSolution(placement, p_vec, z_vec, obj, False, trace, stat)


def sca_power(scenario, a, eps_bar=DEFAULT_EPS_BAR, iter_cap=SCA_ITER_CAP,
              _cache=None):
    """Convexified power allocation for a fixed assignment.

    Returns (powers, z, info): info["trace"] is the nondecreasing total floored
    objective per global iteration (sub-frames padded with their final value).
    """
    arr = np.asarray(getattr(a, "a", a))
    sols = []
    for ni in range(scenario.grid.n_subframes):
        placement = placement_from_assignment(arr, ni)
        key = (ni, tuple(sorted(placement.items())))
        if _cache is not None and key in _cache:
            sols.append(_cache[key])
            continue
        sol = _solve_subframe_sca(scenario, ni, placement, eps_bar, iter_cap)
        if _cache is not None:
            _cache[key] = sol
        sols.append(sol)

    p_out = np.zeros(arr.shape, dtype=float)
    z_out = np.zeros(arr.shape, dtype=float)
    for ni, sol in enumerate(sols):
        if not sol.placement:
            continue
        sub = SubframeProblem(scenario, ni, sol.placement)
        p_out[:, :, ni] = sub.scatter_power(sol.p_vec)
        z_out[:, :, ni] = sub.scatter(sol.z_vec)
    depth = max((len(s.trace) for s in sols), default=1)
    trace = []
    for i in range(depth):
        trace.append(sum(s.trace[min(i, len(s.trace) - 1)] for s in sols if s.trace))
    below = any(s.below_range for s in sols)
    return PowerAlloc(p_out), z_out, {
        "trace": trace, "below_range": below,
        "stationarity": max((s.stationarity for s in sols), default=0.0),
        "objective": trace[-1] if trace else 0.0}


def swap_refine(scenario, a0, seed=0, max_iters=None,
                eps_bar=DEFAULT_EPS_BAR) -> SolveResult:
    """Random single-service moves and pairwise exchanges, each re-optimized,
    kept only on improvement.

    Sweeps seeded random proposals; a sweep with no accepted change, or the
    proposal budget, ends the search. Per-(sub-frame, membership) power
    solutions are cached, so re-evaluating a proposal costs two sub-frame
    solves at most.
    """
    rng = np.random.default_rng(seed)
    a_cur = a0 if isinstance(a0, Assignment) else Assignment(np.asarray(a0))
    grid = scenario.grid
    rbs = [(mi, ni) for ni in range(grid.n_subframes) for mi in range(grid.m_subbands)]
    if max_iters is None:
        max_iters = max(2 * scenario.n_users * (len(rbs) - 1), 1)

    cache: dict = {}
    _, _, info = sca_power(scenario, a_cur, eps_bar, _cache=cache)
    cur_obj = info["objective"]
    proposals_used = 0
    accepted = 0

    improved = True
    while improved and proposals_used < max_iters:
        improved = False
        assigned = a_cur.assigned_users()
        proposals = [("move", k, rb) for k in assigned for rb in rbs
                     if rb != a_cur.rb_of(k)]
        # pairwise exchanges keep the cap and uniqueness constraints intact and
        # are the only legal refinement once every RB sits at capacity
        proposals += [("exch", k1, k2) for i, k1 in enumerate(assigned)
                      for k2 in assigned[i + 1:]
                      if a_cur.rb_of(k1) != a_cur.rb_of(k2)]
        order = rng.permutation(len(proposals))
        for idx in order:
            if proposals_used >= max_iters:
                break
            kind, x1, x2 = proposals[idx]
            if kind == "move":
                mi, ni = x2
                if int(a_cur.a[:, mi, ni].sum()) >= scenario.params.a_max:
                    continue
                a_new = a_cur.with_move(x1, mi, ni)
            else:
                rb1, rb2 = a_cur.rb_of(x1), a_cur.rb_of(x2)
                a_new = a_cur.with_move(x1, *rb2).with_move(x2, *rb1)
            proposals_used += 1
            _, _, cand = sca_power(scenario, a_new, eps_bar, _cache=cache)
            if cand["objective"] > cur_obj + 1e-12:
                a_cur = a_new
                cur_obj = cand["objective"]
                accepted += 1
                improved = True
                break

    p_final, _, info = sca_power(scenario, a_cur, eps_bar, _cache=cache)
    return build_result(
        scenario, "VoS-SCA", a_cur, p_final,
        diagnostics={"accepted_swaps": accepted, "proposals": proposals_used,
                     "trace": info["trace"], "below_range": info["below_range"]})
