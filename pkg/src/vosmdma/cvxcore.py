"""Convex engines shared by both solvers: a linear feasibility oracle over
powers for fixed SNR, and the convexified power-allocation subproblem built
from difference-of-convex splittings with first-order lower bounds."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sopt

from .errors import AnchorInfeasibleError, SolverError
from .subproblem import SubframeProblem, placement_from_assignment

_SLACK_TOL = -1e-9
_RESIDUAL_TOL = 1e-8


# --- dense max-min-slack simplex ---------------------------------------------

def _simplex_max(a_mat, b_vec, c_vec, max_iter=None):
    """Maximize c^T x s.t. A x <= b (b >= 0), x >= 0 via tableau simplex.

    Dantzig pricing with a Bland fallback after a pivot budget, so tiny
    degenerate instances cannot cycle. Returns (x, value).
    """
    m, n = a_mat.shape
    tab = np.zeros((m + 1, n + m + 1))
    tab[:m, :n] = a_mat
    tab[:m, n:n + m] = np.eye(m)
    tab[:m, -1] = b_vec
    tab[-1, :n] = -c_vec
    basis = np.arange(n, n + m)
    if max_iter is None:
        max_iter = 200 * (m + n)
    bland_after = 20 * (m + n)
    for it in range(max_iter):
        obj = tab[-1, :-1]
        if it < bland_after:
            j = int(np.argmin(obj))
            if obj[j] >= -1e-11:
                break
        else:
            neg = np.nonzero(obj < -1e-11)[0]
            if len(neg) == 0:
                break
            j = int(neg[0])
        col = tab[:m, j]
        pos = col > 1e-11
        if not np.any(pos):
            raise SolverError(f"LP unbounded in column {j} (should be impossible here)")
        ratios = np.full(m, np.inf)
        ratios[pos] = tab[:m, -1][pos] / col[pos]
        i = int(np.argmin(ratios))
        if it >= bland_after:
            ties = np.nonzero(ratios <= ratios[i] * (1 + 1e-12) + 1e-300)[0]
            i = int(ties[np.argmin(basis[ties])])
        tab[i] /= tab[i, j]
        colcpy = tab[:, j].copy()
        colcpy[i] = 0.0
        tab -= np.outer(colcpy, tab[i])
        basis[i] = j
    else:
        raise SolverError("simplex pivot budget exhausted")
    x = np.zeros(n + m)
    x[basis] = tab[:m, -1]
    return x[:n], float(tab[-1, -1])


def max_min_slack(g_mat, h_vec, upper, row_scales=None):
    """Maximize the uniform slack t of {G p + t <= h, 0 <= p <= upper}.

    Rows are scaled first (by row_scales when supplied, else by their own
    max-abs magnitude), so t is a relative slack and the returned sign is
    robust across the wide coefficient magnitudes of these problems.
    Returns (t, p_witness).
    """
    n_p = g_mat.shape[1]
    if row_scales is None:
        row_scales = np.maximum(
            np.abs(g_mat).max(axis=1, initial=0.0) * max(np.max(upper, initial=1.0), 1.0),
            np.abs(h_vec))
        row_scales = np.where(row_scales > 0, row_scales, 1.0)
    if n_p == 0:
        if h_vec.size == 0:
            return 1.0, np.zeros(0)
        slacks = h_vec / row_scales
        return float(slacks.min()), np.zeros(0)
    rows = np.vstack([g_mat * upper[None, :] / row_scales[:, None], np.eye(n_p)])
    rhs = np.concatenate([h_vec / row_scales, np.ones(n_p)])
    shift = 1.0 + float(np.abs(rhs).max())
    a_mat = np.hstack([rows, np.ones((rows.shape[0], 1))])
    b_vec = rhs + shift
    c_vec = np.zeros(n_p + 1)
    c_vec[n_p] = 1.0
    x, _ = _simplex_max(a_mat, b_vec, c_vec)
    return float(x[n_p] - shift), x[:n_p] * upper


@dataclass(frozen=True)
class FeasibilityProblem:
    """Power feasibility question for one sub-frame at fixed assignment and SNR."""

    sub: SubframeProblem
    z: np.ndarray

    @classmethod
    def build(cls, scenario, n, a, z):
        """From full (K, M, N) assignment/SNR tensors and a 1-based sub-frame index."""
        sub = SubframeProblem(scenario, n - 1, placement_from_assignment(a, n - 1))
        zarr = np.asarray(getattr(z, "z", z), dtype=float)
        return cls(sub=sub, z=sub.gather(zarr[:, :, n - 1]))


@dataclass(frozen=True)
class FeasibilityResult:
    feasible: bool
    p: np.ndarray | None
    slack: float


def feasible_power(problem: FeasibilityProblem) -> FeasibilityResult:
    """Decide whether some power vector meets every constraint at the fixed SNR.

    Solves the max-min-slack LP; feasible iff the optimal (row-scaled) slack is
    >= -1e-9, in which case the maximal-slack witness allocation is returned.
    """
    sub, z = problem.sub, np.asarray(problem.z, dtype=float)
    if np.any(z < 0):
        raise ValueError("SNR vector must be nonnegative")
    g_mat, h_vec = sub.constraint_rows(z)
    slack, p = max_min_slack(g_mat, h_vec, sub.power_box(), sub.row_scales(z))
    if slack >= _SLACK_TOL:
        p = sub.polish_witness(z, np.clip(p, 0.0, None))
        return FeasibilityResult(True, p, slack)
    return FeasibilityResult(False, None, slack)


# --- difference-of-convex building blocks -------------------------------------

@dataclass(frozen=True)
class QuadForm:
    """Convex quadratic (a . x + b)^2 of the stacked [z; p] sub-frame vector."""

    a: np.ndarray
    b: float

    def value(self, x):
        return float(self.a @ x + self.b) ** 2

    def grad(self, x):
        return 2.0 * float(self.a @ x + self.b) * self.a

    def inner(self, x):
        return float(self.a @ x + self.b)


def taylor_lower_bound(term: QuadForm, anchor, query) -> float:
    """First-order expansion of a convex quadratic at the anchor.

    Tight at the anchor and never above the true value anywhere.
    """
    anchor = np.asarray(anchor, dtype=float)
    query = np.asarray(query, dtype=float)
    return term.value(anchor) + float(term.grad(anchor) @ (query - anchor))


@dataclass(frozen=True)
class DcRecord:
    """One convexity split: pair of convex quadratics whose difference is the
    bilinear SNR constraint, plus the pieces of the original inequality."""

    kind: str            # "comm" or "sense"
    n: int               # 1-based sub-frame
    k: int               # service index
    observer: int | None  # decoding user for comm pairs
    q_plus: QuadForm     # (z + interference + noise)^2
    q_minus: QuadForm    # (z - interference - noise)^2
    rhs_coef: np.ndarray  # rhs as affine in [z; p]
    rhs_const: float


@dataclass
class DcTerms:
    records: list
    subframes: dict


def _dc_records_for_subframe(sub: SubframeProblem):
    """Convexity splits for every comm decode pair and sensing user in a sub-frame."""
    dim, n_p = sub.dim, sub.n_power
    records = []
    for e, q, num, interf, sigma in sub._comm_pairs:
        a_plus = np.zeros(dim + n_p)
        a_plus[e.coord] = 1.0
        a_plus[dim:] = interf
        a_minus = np.zeros(dim + n_p)
        a_minus[e.coord] = 1.0
        a_minus[dim:] = -interf
        rhs = np.zeros(dim + n_p)
        rhs[dim:] = num
        records.append(DcRecord(
            kind="comm", n=sub.ni + 1, k=e.k, observer=q,
            q_plus=QuadForm(a_plus, sigma), q_minus=QuadForm(a_minus, -sigma),
            rhs_coef=rhs, rhs_const=0.0))
    for e, coef, sigma, num in sub._sense_rows:
        a_plus = np.zeros(dim + n_p)
        a_plus[e.coord] = 1.0
        a_plus[dim:] = coef
        a_minus = np.zeros(dim + n_p)
        a_minus[e.coord] = 1.0
        a_minus[dim:] = -coef
        records.append(DcRecord(
            kind="sense", n=sub.ni + 1, k=e.k, observer=None,
            q_plus=QuadForm(a_plus, sigma), q_minus=QuadForm(a_minus, -sigma),
            rhs_coef=np.zeros(dim + n_p), rhs_const=num))
    return records


def dc_eval(scenario, a, z, p) -> DcTerms:
    """Values/gradients of the convexity-split quadratics at the point (z, p).

    Returned records carry the quadratic forms themselves, so callers can
    evaluate values, exact gradients and Taylor bounds at any point.
    """
    zarr = np.asarray(getattr(z, "z", z), dtype=float)
    parr = np.asarray(getattr(p, "p", p), dtype=float)
    records = []
    subframes = {}
    for ni in range(scenario.grid.n_subframes):
        placement = placement_from_assignment(a, ni)
        if not placement:
            continue
        sub = SubframeProblem(scenario, ni, placement)
        subframes[ni + 1] = sub
        records.extend(_dc_records_for_subframe(sub))
    # attach evaluation points for convenience checks
    terms = DcTerms(records=records, subframes=subframes)
    terms.point = {n: np.concatenate([sub.gather(zarr[:, :, n - 1]),
                                      sub.gather_power(parr[:, :, n - 1])])
                   for n, sub in subframes.items()}
    return terms


# --- convexified power step ----------------------------------------------------

@dataclass
class P4SubframeResult:
    z: np.ndarray
    p: np.ndarray
    objective: float
    stationarity: float
    converged: bool


def _anchor_residual(sub, z_vec, p_vec, z_floor):
    """Worst violation of the original constraints + SNR floor at a point."""
    g_mat, h_vec = sub.constraint_rows(z_vec)
    res = 0.0
    if g_mat.shape[0]:
        res = float(np.max((g_mat @ p_vec - h_vec) / sub.row_scales(z_vec)))
    res = max(res, float(np.max(z_floor - z_vec, initial=0.0))
              / max(1.0, float(np.max(z_floor, initial=0.0))))
    return res


def solve_p4_subframe(sub: SubframeProblem, z_anchor, p_anchor, tol=1e-6,
                      maxiter=80) -> P4SubframeResult:
    """One convexified ascent step on a sub-frame from a feasible anchor.

    Maximizes the floored log objective subject to the budget/fairness/box
    rows, the linear positioning SNR rows, the convexified comm/sensing SNR
    rows (expanded in a cancellation-free form), and the zero-value SNR floor.
    Never returns a point worse than the anchor.
    """
    z_anchor = np.asarray(z_anchor, dtype=float)
    p_anchor = np.asarray(p_anchor, dtype=float)
    dim, n_p = sub.dim, sub.n_power
    z_floor = sub.z_min_vector()
    if _anchor_residual(sub, z_anchor, p_anchor, z_floor) > 1e-6:
        raise AnchorInfeasibleError(
            f"anchor violates sub-frame {sub.ni + 1} constraints "
            f"(residual {_anchor_residual(sub, z_anchor, p_anchor, z_floor):.3g})")
    anchor_obj = sub.objective(z_anchor)
    if dim == 0 or n_p == 0:
        # nothing to optimize: powers are fixed (or no services at all)
        return P4SubframeResult(z_anchor.copy(), p_anchor.copy(), anchor_obj, 0.0, True)

    z0 = sub.initial_vertex()
    s_z = np.maximum(np.maximum(z0, z_anchor), 1e-12)
    p_max = sub.scenario.params.p_max_w

    def unpack(x):
        return x[:dim] * s_z, x[dim:] * p_max

    def fun(x):
        z, _ = unpack(x)
        return -sub.objective(z)

    def jac(x):
        z, _ = unpack(x)
        g = np.zeros(dim + n_p)
        g[:dim] = -sub.objective_grad(z) * s_z
        return g

    # Linear rows (budget, fairness, positioning SNR), one vector constraint:
    # fun(x) = A x + b >= 0 in the scaled variable space.
    lin_rows = []
    lin_offs = []
    if n_p:
        row = np.zeros(dim + n_p)
        row[dim:] = -1.0
        lin_rows.append(row)
        lin_offs.append(1.0)
    for frow in sub._fairness:
        scale = max(float(np.abs(frow).max()) * p_max, 1e-300)
        row = np.zeros(dim + n_p)
        row[dim:] = -frow * p_max / scale
        lin_rows.append(row)
        lin_offs.append(0.0)
    for e, coef, sigma in sub._pos_rows:
        scale = max(float(coef.max()) * p_max, sigma * float(s_z[e.coord]), 1e-300)
        row = np.zeros(dim + n_p)
        row[e.coord] = -sigma * s_z[e.coord] / scale
        row[dim:] = coef * p_max / scale
        lin_rows.append(row)
        lin_offs.append(0.0)
    a_lin = np.vstack(lin_rows) if lin_rows else np.zeros((0, dim + n_p))
    b_lin = np.array(lin_offs)

    # Convexified comm/sense rows. The raw split adds a dimensionless SNR to a
    # Watt-scale interference power, which makes the Taylor remainder freeze z
    # steps at sqrt(noise) scale; rebalancing the identical constraint as
    # (z/s) * (s*(I+sigma)) <= rhs with s^2 = z0/(I0+sigma) keeps both factors
    # comparable at the anchor, so the same linearization permits real steps.
    # Expanded cancellation-free form with u = z/s + s*(I+sigma) and v0 its
    # anchor difference: C = (u - v0)^2/4 + v0*s*(I+sigma) - rhs(p) <= 0.
    records = _dc_records_for_subframe(sub)
    n_sca = len(records)
    sca_coord = np.zeros(n_sca, dtype=int)
    sca_icoef = np.zeros((n_sca, n_p))
    sca_sigma = np.zeros(n_sca)
    sca_s = np.zeros(n_sca)
    sca_v0 = np.zeros(n_sca)
    sca_rhs = np.zeros((n_sca, n_p))
    sca_rhs0 = np.zeros(n_sca)
    sca_scale = np.zeros(n_sca)
    for i, rec in enumerate(records):
        coord = int(np.argmax(rec.q_plus.a[:dim]))
        icoef = rec.q_plus.a[dim:]
        sigma = rec.q_plus.b
        c0 = float(icoef @ p_anchor) + sigma
        s = np.sqrt(max(z_anchor[coord], 1e-30) / max(c0, 1e-300))
        sca_coord[i] = coord
        sca_icoef[i] = icoef
        sca_sigma[i] = sigma
        sca_s[i] = s
        sca_v0[i] = z_anchor[coord] / s - s * c0
        sca_rhs[i] = rec.rhs_coef[dim:]
        sca_rhs0[i] = rec.rhs_const
        sca_scale[i] = max(max(z_anchor[coord], 1e-30) * c0,
                           abs(float(sca_rhs[i] @ p_anchor) + rec.rhs_const), 1e-300)

    def cons_fun(x):
        z, p = unpack(x)
        out_lin = a_lin @ x + b_lin
        if n_sca == 0:
            return out_lin
        i_hat = sca_s * (sca_icoef @ p + sca_sigma)
        umv = (z[sca_coord] / sca_s - sca_v0) + i_hat
        c = 0.25 * umv * umv + sca_v0 * i_hat - (sca_rhs @ p + sca_rhs0)
        return np.concatenate([out_lin, -c / sca_scale])

    def cons_jac(x):
        z, p = unpack(x)
        if n_sca == 0:
            return a_lin
        i_hat = sca_s * (sca_icoef @ p + sca_sigma)
        umv = (z[sca_coord] / sca_s - sca_v0) + i_hat
        jac = np.zeros((n_sca, dim + n_p))
        np.add.at(jac, (np.arange(n_sca), sca_coord),
                  0.5 * umv * s_z[sca_coord] / sca_s)
        jac[:, dim:] = ((0.5 * umv + sca_v0) * sca_s)[:, None] * sca_icoef * p_max
        jac[:, dim:] -= sca_rhs * p_max
        return np.vstack([a_lin, -jac / sca_scale[:, None]])

    cons = [{"type": "ineq", "fun": cons_fun, "jac": cons_jac}]

    bounds = ([(float(z_floor[d] / s_z[d]), float(z0[d] / s_z[d]) * (1 + 1e-9) + 1e-12)
               for d in range(dim)]
              + [(0.0, 1.0)] * n_p)
    x0 = np.concatenate([z_anchor / s_z, p_anchor / p_max])
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])

    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            res = sopt.minimize(fun, x0, jac=jac, bounds=bounds, constraints=cons,
                                method="SLSQP",
                                options={"maxiter": maxiter, "ftol": 1e-12})
        x_new = res.x
    except (ValueError, FloatingPointError):
        x_new = x0

    z_raw, p_raw = unpack(x_new)
    # the solver honors rows only to a scaled tolerance, which at Watt scales
    # can leave an SNR claim unbacked by its power; top up the self-served
    # positioning rows, then clamp every claim to what the powers achieve
    p_new = sub.polish_witness(np.maximum(z_raw, z_floor), p_raw)
    z_new = np.minimum(np.maximum(z_raw, z_floor), sub.induced_z(p_new))
    floor_gap = float(np.max(z_floor - z_new, initial=0.0))
    floor_rel = floor_gap / max(1.0, float(np.max(z_floor, initial=0.0)))
    worst = max(-float(np.min(cons_fun(np.concatenate(
        [z_new / s_z, p_new / p_max])))), 0.0)
    new_obj = sub.objective(z_new)
    if worst > _RESIDUAL_TOL or floor_rel > 1e-9 or new_obj < anchor_obj - 1e-12:
        z_new, p_new, new_obj = z_anchor.copy(), p_anchor.copy(), anchor_obj
        x_new = x0
    stat = _stationarity_residual(fun, jac, cons_fun, cons_jac, bounds, x_new)
    return P4SubframeResult(z_new, p_new, new_obj, stat, stat <= max(tol, 1e-6))


def _stationarity_residual(fun, jac, cons_fun, cons_jac, bounds, x,
                           active_tol=1e-6):
    """Norm of the objective gradient minus its best cone combination of
    active-constraint normals (nonnegative multipliers via NNLS)."""
    g = jac(x)
    vals = np.atleast_1d(cons_fun(x))
    jmat = np.atleast_2d(cons_jac(x))
    cols = [-jmat[i] for i in np.nonzero(vals <= active_tol)[0]]
    for i, (lo, hi) in enumerate(bounds):
        e = np.zeros(len(x))
        if x[i] <= lo + active_tol * max(1.0, abs(lo)):
            e[i] = 1.0
            cols.append(e)
        elif x[i] >= hi - active_tol * max(1.0, abs(hi)):
            e[i] = -1.0
            cols.append(e)
    gnorm = max(float(np.linalg.norm(g)), 1e-12)
    if not cols:
        return float(np.linalg.norm(g)) / gnorm
    a_mat = np.column_stack(cols)
    try:
        _, resid = sopt.nnls(a_mat, -g)
    except RuntimeError:
        return np.inf
    return float(resid) / gnorm


def solve_p4(scenario, a, z_anchor, p_anchor, tol=1e-6):
    """Convexified power step over every sub-frame; returns full tensors.

    The anchor must be feasible (it is whenever it came from an actual power
    allocation with its induced SNRs, shrunk nowhere below the zero-value
    floor). Output satisfies every constraint to 1e-8 and never undercuts the
    anchor objective.
    """
    zarr = np.asarray(getattr(z_anchor, "z", z_anchor), dtype=float)
    parr = np.asarray(getattr(p_anchor, "p", p_anchor), dtype=float)
    z_out = np.array(zarr)
    p_out = np.array(parr)
    total = 0.0
    stat = 0.0
    for ni in range(scenario.grid.n_subframes):
        placement = placement_from_assignment(a, ni)
        if not placement:
            continue
        sub = SubframeProblem(scenario, ni, placement)
        res = solve_p4_subframe(sub, sub.gather(zarr[:, :, ni]),
                                sub.gather_power(parr[:, :, ni]), tol=tol)
        z_out[:, :, ni] = sub.scatter(res.z)
        p_slice = sub.scatter_power(res.p)
        for e in sub.entries:
            if e.pvar is not None:
                p_out[e.k, e.mi, ni] = p_slice[e.k, e.mi]
        total += res.objective
        stat = max(stat, res.stationarity)
    return z_out, p_out, total, stat
