"""Per-sub-frame problem assembly shared by the feasibility oracle, the
polyblock stage and the convexified power step.

Everything in one sub-frame couples only through the per-sub-frame power
budget, so each solver works on one of these objects at a time: ordered
(service, band) entries, their auxiliary-SNR objective pieces, the linear
constraint rows for fixed SNR, and the SNR levels induced by a power vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kpi, vosmetric
from .types import ServiceType
from .vosmetric import LOG_FLOOR


@dataclass(frozen=True)
class Entry:
    k: int
    mi: int  # 0-based sub-band
    service: ServiceType
    coord: int          # index into the sub-frame z vector
    pvar: int | None    # index into the power vector, None for sensing


def placement_from_assignment(a, ni):
    """{user: band} for sub-frame index ni (0-based) of a full assignment tensor."""
    arr = np.asarray(getattr(a, "a", a))
    placement = {}
    for k, mi in zip(*np.nonzero(arr[:, :, ni])):
        placement[int(k)] = int(mi)
    return placement


class SubframeProblem:
    """Frozen view of one sub-frame under a fixed service-to-band placement."""

    def __init__(self, scenario, ni, placement):
        self.scenario = scenario
        self.ni = int(ni)
        self.placement = dict(sorted(placement.items()))
        grid = scenario.grid
        if not 0 <= self.ni < grid.n_subframes:
            raise ValueError(f"sub-frame index {ni} out of range")
        for k, mi in self.placement.items():
            if not 0 <= mi < grid.m_subbands:
                raise ValueError(f"band index {mi} out of range for user {k}")

        entries = []
        pvar = 0
        for mi in range(grid.m_subbands):
            for k in sorted(k for k, b in self.placement.items() if b == mi):
                svc = scenario.users[k].service
                pv = None
                if svc in (ServiceType.COMM, ServiceType.POS):
                    pv = pvar
                    pvar += 1
                entries.append(Entry(k=k, mi=mi, service=svc, coord=len(entries), pvar=pv))
        self.entries: tuple[Entry, ...] = tuple(entries)
        self.n_power = pvar
        self.dim = len(entries)
        self._by_user = {e.k: e for e in entries}

        # per-band groupings (entries, not users)
        self.bands: dict[int, list[Entry]] = {}
        for e in entries:
            self.bands.setdefault(e.mi, []).append(e)

        self._latency = float(kpi.latency(self.ni + 1, grid))
        self._build_terms()
        self._build_coupling()

    # -- objective pieces ------------------------------------------------------

    def _build_terms(self):
        """Per-entry KPI specs and the z-independent latency log constants."""
        self._zspecs = []       # list of (spec, kind, const) per entry, kind in {rate, crb, detect}
        lat_exact = 0.0
        lat_floored = 0.0
        sc = self.scenario
        for e in self.entries:
            user = sc.users[e.k]
            if e.service is ServiceType.COMM:
                self._zspecs.append(("rate", (user.kpis[0],), None))
                lat_spec = user.kpis[1]
            elif e.service is ServiceType.POS:
                consts = kpi.crb_constants(sc, e.k, e.mi + 1, self.ni + 1)
                self._zspecs.append(("crb", tuple(user.kpis[:3]), consts.as_tuple()))
                lat_spec = user.kpis[3]
            else:
                self._zspecs.append(("detect", (user.kpis[0],), user.false_alarm))
                lat_spec = user.kpis[1]
            if lat_spec.weight > 0:
                term = lat_spec.weight * float(
                    vosmetric.log_value_array(np.float64(self._latency), lat_spec))
                lat_exact += term
                lat_floored += max(term, LOG_FLOOR)
        self.latency_exact = lat_exact
        self.latency_floored = lat_floored

    def entry_terms(self, coord, z, floored=True):
        """Weighted log-value sum of entry `coord`'s SNR-driven KPIs at SNR z.

        Vectorized over z; floored=False propagates -inf for below-range terms.
        """
        kind, specs, extra = self._zspecs[coord]
        z = np.asarray(z, dtype=float)
        if kind == "rate":
            qs = [np.log2(1.0 + z)]
        elif kind == "crb":
            qs = [np.divide(c, z, out=np.full_like(z, np.inf), where=z > 0) for c in extra]
        else:
            qs = [1.0 - kpi.chi2_cdf(kpi.chi2_inv(1.0 - extra) / (z + 1.0))]
        total = np.zeros_like(z)
        for spec, q in zip(specs, qs):
            if spec.weight == 0.0:
                continue
            term = spec.weight * vosmetric.log_value_array(q, spec)
            total = total + (np.maximum(term, LOG_FLOOR) if floored else term)
        return total

    def entry_terms_grad(self, coord, z):
        """d/dz of the floored entry term sum at scalar z (0 on flat regions)."""
        kind, specs, extra = self._zspecs[coord]
        z = float(z)
        total = 0.0
        if kind == "rate":
            spec = specs[0]
            q = np.log2(1.0 + z)
            term = spec.weight * float(vosmetric.log_value_array(np.float64(q), spec))
            if term > LOG_FLOOR:
                total += spec.weight * vosmetric.d_log_value_dq(q, spec) / ((1.0 + z) * np.log(2.0))
        elif kind == "crb":
            for spec, c in zip(specs, extra):
                if z <= 0 or spec.weight == 0.0:
                    continue
                q = c / z
                term = spec.weight * float(vosmetric.log_value_array(np.float64(q), spec))
                if term > LOG_FLOOR:
                    total += spec.weight * vosmetric.d_log_value_dq(q, spec) * (-c / z**2)
        else:
            spec = specs[0]
            q = float(kpi.detect_prob(z, extra))
            term = spec.weight * float(vosmetric.log_value_array(np.float64(q), spec))
            if term > LOG_FLOOR:
                total += (spec.weight * vosmetric.d_log_value_dq(q, spec)
                          * float(kpi.d_detect_prob_dz(z, extra)))
        return float(total)

    def objective(self, z_vec, floored=True):
        """Sub-frame log objective at the SNR vector (latency constants included)."""
        z_vec = np.asarray(z_vec, dtype=float)
        total = self.latency_floored if floored else self.latency_exact
        for e in self.entries:
            total += float(self.entry_terms(e.coord, np.float64(z_vec[e.coord]),
                                            floored=floored))
        return float(total)

    def objective_grad(self, z_vec):
        return np.array([self.entry_terms_grad(e.coord, z_vec[e.coord])
                         for e in self.entries])

    # -- SNR coupling ----------------------------------------------------------

    def _build_coupling(self):
        """Precompute gain rows against the power vector for every entry."""
        sc = self.scenario
        ni = self.ni
        chic, chip, chis = sc.coeffs.chi_comm, sc.coeffs.chi_pos, sc.coeffs.chi_sense
        self._comm_pairs = []   # (entry, q_user, num_coef e_k, interf coef vector, sigma_q)
        self._pos_rows = []     # (entry, coef vector, sigma)
        self._sense_rows = []   # (entry, coef vector, sigma, num_const)
        for mi, band in self.bands.items():
            comm = [e for e in band if e.service is ServiceType.COMM]
            bspow = [e for e in band if e.pvar is not None]
            for e in band:
                if e.service is ServiceType.COMM:
                    for q in comm:
                        if q.k > e.k:
                            continue
                        interf = np.zeros(self.n_power)
                        for j in comm:
                            if j.k < e.k:
                                interf[j.pvar] = chic[q.k, j.k, mi, ni]
                        num = np.zeros(self.n_power)
                        num[e.pvar] = chic[q.k, e.k, mi, ni]
                        self._comm_pairs.append(
                            (e, q.k, num, interf, sc.users[q.k].noise_w))
                elif e.service is ServiceType.POS:
                    coef = np.zeros(self.n_power)
                    for j in bspow:
                        coef[j.pvar] = chip[e.k, j.k, mi, ni]
                    self._pos_rows.append((e, coef, sc.params.pos_noise_w))
                else:
                    coef = np.zeros(self.n_power)
                    for j in bspow:
                        coef[j.pvar] = chis[e.k, j.k, mi, ni]
                    user = sc.users[e.k]
                    grid = sc.grid
                    num = (grid.b_subcarriers * grid.l_symbols * user.sense_power_w
                           * sc.coeffs.lam[e.k, mi, ni])
                    self._sense_rows.append((e, coef, user.noise_w, num))
        # fairness triples: per band, observer k, pair j < q (all co-assigned comm)
        self._fairness = []  # rows g with g . p <= 0
        for mi, band in self.bands.items():
            comm = [e for e in band if e.service is ServiceType.COMM]
            for obs in comm:
                for a_idx, near in enumerate(comm):
                    for far in comm[a_idx + 1:]:
                        row = np.zeros(self.n_power)
                        row[near.pvar] = chic[obs.k, near.k, mi, ni]
                        row[far.pvar] = -chic[obs.k, far.k, mi, ni]
                        self._fairness.append(row)
        self._freeze_rows()

    def _freeze_rows(self):
        """Dense row templates so constraint assembly is a couple of array ops.

        Every power constraint is affine in p with coefficients affine in one
        z coordinate: G(z)[r] = base[r] + z[coord[r]] * zpart[r], and likewise
        for the right-hand side.
        """
        n_p = self.n_power
        base, zpart, coords, h_base, h_z = [], [], [], [], []
        p_max = self.scenario.params.p_max_w
        if n_p:
            base.append(np.ones(n_p))
            zpart.append(np.zeros(n_p))
            coords.append(0)
            h_base.append(p_max)
            h_z.append(0.0)
        for row in self._fairness:
            base.append(row)
            zpart.append(np.zeros(n_p))
            coords.append(0)
            h_base.append(0.0)
            h_z.append(0.0)
        for e, _q, num, interf, sigma in self._comm_pairs:
            base.append(-num)
            zpart.append(interf)
            coords.append(e.coord)
            h_base.append(0.0)
            h_z.append(-sigma)
        for e, coef, sigma in self._pos_rows:
            base.append(-coef)
            zpart.append(np.zeros(n_p))
            coords.append(e.coord)
            h_base.append(0.0)
            h_z.append(-sigma)
        for e, coef, sigma, num in self._sense_rows:
            base.append(np.zeros(n_p))
            zpart.append(coef)
            coords.append(e.coord)
            h_base.append(num)
            h_z.append(-sigma)
        if base:
            self._g_base = np.vstack(base) if n_p else np.zeros((len(base), 0))
            self._g_zpart = np.vstack(zpart) if n_p else np.zeros((len(base), 0))
        else:
            self._g_base = np.zeros((0, n_p))
            self._g_zpart = np.zeros((0, n_p))
        self._row_coords = np.array(coords, dtype=int)
        self._h_base = np.array(h_base)
        self._h_zcoef = np.array(h_z)
        # matrices for vectorized induced SNRs
        if self._comm_pairs:
            self._cp_num = np.vstack([num for _, _, num, _, _ in self._comm_pairs])
            self._cp_int = np.vstack([interf for _, _, _, interf, _ in self._comm_pairs])
            self._cp_sigma = np.array([sig for *_, sig in self._comm_pairs])
            self._cp_coord = np.array([e.coord for e, *_ in self._comm_pairs], dtype=int)
        else:
            self._cp_num = np.zeros((0, n_p))
            self._cp_int = np.zeros((0, n_p))
            self._cp_sigma = np.zeros(0)
            self._cp_coord = np.zeros(0, dtype=int)

    def induced_z(self, p_vec):
        """Exact SNR vector achieved by the power vector (the constraint boundary)."""
        p_vec = np.asarray(p_vec, dtype=float)
        z = np.zeros(self.dim)
        if len(self._cp_coord):
            gammas = (self._cp_num @ p_vec) / (self._cp_int @ p_vec + self._cp_sigma)
            gamma_min = np.full(self.dim, np.inf)
            np.minimum.at(gamma_min, self._cp_coord, gammas)
            z[self._cp_coord] = gamma_min[self._cp_coord]
        for e, coef, sigma in self._pos_rows:
            z[e.coord] = float(coef @ p_vec) / sigma
        for e, coef, sigma, num in self._sense_rows:
            z[e.coord] = num / (float(coef @ p_vec) + sigma)
        return z

    def constraint_rows(self, z_vec):
        """(G, h) with G p <= h equivalent to all power constraints at fixed SNR."""
        z_vec = np.asarray(z_vec, dtype=float)
        if self._row_coords.size == 0:
            return self._g_base, self._h_base
        zr = z_vec[self._row_coords]
        return (self._g_base + zr[:, None] * self._g_zpart,
                self._h_base + zr * self._h_zcoef)

    def row_scales(self, z_vec):
        """Pre-cancellation row magnitudes for relative feasibility tests.

        The right-hand side of a boundary row can cancel to float dust (a lone
        sensing user at its SNR cap has h = num - z*sigma ~ 0); scaling by the
        constituent magnitudes keeps residual tests meaningful there.
        """
        z_vec = np.asarray(z_vec, dtype=float)
        if self._row_coords.size == 0:
            return np.ones(0)
        zr = np.abs(z_vec[self._row_coords])
        p_max = self.scenario.params.p_max_w
        g_mag = (np.abs(self._g_base) + zr[:, None] * np.abs(self._g_zpart))
        g_scale = g_mag.max(axis=1, initial=0.0) * p_max
        h_scale = np.abs(self._h_base) + zr * np.abs(self._h_zcoef)
        return np.maximum(np.maximum(g_scale, h_scale), 1e-300)

    def power_box(self):
        return np.full(self.n_power, self.scenario.params.p_max_w)

    def polish_witness(self, z_vec, p_vec):
        """Top up positioning powers so the witness truly covers the probed SNRs.

        Positioning rows need power twelve-plus orders below the row scale, so
        an LP witness can under-serve them inside the slack tolerance while the
        value terms still care. Raising the user's own beam power is exact and
        interference-free for everyone else; the additions are ~1e-13 of the
        budget.
        """
        p_vec = np.array(p_vec, dtype=float)
        for e, coef, sigma in self._pos_rows:
            if e.pvar is None or coef[e.pvar] <= 0:
                continue
            need = z_vec[e.coord] * sigma - float(coef @ p_vec)
            if need > 0:
                p_vec[e.pvar] += need / coef[e.pvar] * (1.0 + 1e-12)
        return p_vec

    def initial_vertex(self):
        """Componentwise upper bound on every feasible SNR vector."""
        sc = self.scenario
        p_max = sc.params.p_max_w
        z0 = np.zeros(self.dim)
        best = {}
        for e, q, num, _interf, sigma in self._comm_pairs:
            bound = p_max * float(num[e.pvar]) / sigma
            key = e.coord
            best[key] = max(best.get(key, 0.0), bound)
        for coord, val in best.items():
            z0[coord] = val
        for e, coef, sigma in self._pos_rows:
            z0[e.coord] = p_max * float(coef.sum()) / sigma
        for e, coef, sigma, num in self._sense_rows:
            z0[e.coord] = num / sigma
        return z0

    def z_min_vector(self):
        return np.array([
            vosmetric.z_min(self.scenario, e.k, e.mi + 1, self.ni + 1)
            for e in self.entries])

    def saturation_vector(self):
        """Per-entry SNR beyond which the entry's value terms are exactly 1.

        inf when some positive-weight KPI never saturates. Because value terms
        are constant above this level and the feasible set is closed under
        componentwise decrease, optima are preserved when search boxes are
        clipped here.
        """
        out = np.zeros(self.dim)
        for e in self.entries:
            kind, specs, extra = self._zspecs[e.coord]
            sat = 0.0
            if kind == "rate":
                if specs[0].weight > 0:
                    sat = 2.0 ** specs[0].target - 1.0
            elif kind == "crb":
                for spec, c in zip(specs, extra):
                    if spec.weight > 0:
                        sat = max(sat, c / spec.target)
            else:
                spec = specs[0]
                if spec.weight > 0:
                    if spec.target >= 1.0:
                        sat = np.inf
                    else:
                        w_fa = float(kpi.chi2_inv(1.0 - extra))
                        sat = max(w_fa / float(kpi.chi2_inv(1.0 - spec.target)) - 1.0,
                                  0.0)
            out[e.coord] = sat
        return out

    # -- tensor scatter/gather -------------------------------------------------

    def scatter(self, vec):
        """Sub-frame vector -> (K, M) slice."""
        sc = self.scenario
        out = np.zeros((sc.n_users, sc.grid.m_subbands))
        for e in self.entries:
            out[e.k, e.mi] = vec[e.coord]
        return out

    def scatter_power(self, p_vec):
        sc = self.scenario
        out = np.zeros((sc.n_users, sc.grid.m_subbands))
        for e in self.entries:
            if e.pvar is not None:
                out[e.k, e.mi] = p_vec[e.pvar]
        return out

    def gather(self, slice_km):
        """(K, M) slice -> sub-frame vector."""
        return np.array([slice_km[e.k, e.mi] for e in self.entries])

    def gather_power(self, slice_km):
        out = np.zeros(self.n_power)
        for e in self.entries:
            if e.pvar is not None:
                out[e.pvar] = slice_km[e.k, e.mi]
        return out
