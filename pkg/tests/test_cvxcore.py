import numpy as np
import pytest
from scipy import optimize as sopt

from vosmdma import cvxcore, kpi
from vosmdma.cvxcore import (FeasibilityProblem, QuadForm, dc_eval, feasible_power,
                             max_min_slack, solve_p4_subframe, taylor_lower_bound)
from vosmdma.errors import AnchorInfeasibleError
from vosmdma.scenario import ScenarioConfig, generate
from vosmdma.sca import _fixed_power_vec
from vosmdma.subproblem import SubframeProblem


class TestSimplex:
    def test_agrees_with_reference_lp_solver(self):
        # random feasibility systems, slack sign checked against scipy HiGHS
        rng = np.random.default_rng(4)
        for trial in range(60):
            n_p = int(rng.integers(1, 5))
            rows = int(rng.integers(1, 8))
            g = rng.normal(size=(rows, n_p)) * 10.0 ** rng.integers(-6, 3, (rows, n_p))
            h = rng.normal(size=rows) * 10.0 ** rng.integers(-6, 3, rows)
            ub = rng.uniform(0.5, 2.0, n_p)
            t, p = max_min_slack(g, h, ub)
            scale = np.maximum(np.abs(g).max(axis=1) * max(ub.max(), 1.0), np.abs(h))
            scale[scale == 0] = 1
            res = sopt.linprog(
                c=[0.0] * n_p + [-1.0],
                A_ub=np.hstack([g / scale[:, None], np.ones((rows, 1))]),
                b_ub=h / scale,
                bounds=[(0, u) for u in ub] + [(None, None)],
                method="highs")
            # scipy scales box rows differently, so compare the achievable
            # feasibility verdict rather than the exact slack value
            assert (t >= -1e-9) == (res.status == 0 and -res.fun >= -1e-9) or (
                abs(t) < 1e-7 or abs(-res.fun) < 1e-7)

    def test_witness_satisfies_rows(self):
        rng = np.random.default_rng(9)
        for _ in range(40):
            n_p = int(rng.integers(1, 4))
            rows = int(rng.integers(1, 6))
            g = rng.normal(size=(rows, n_p))
            h = rng.uniform(0.1, 2.0, rows)
            ub = np.ones(n_p)
            t, p = max_min_slack(g, h, ub)
            if t >= 0:
                assert np.all(g @ p <= h + 1e-9)
                assert np.all(p >= -1e-12) and np.all(p <= ub + 1e-9)


def _problem(scenario, ni, placement, z_vec):
    sub = SubframeProblem(scenario, ni, placement)
    return FeasibilityProblem(sub=sub, z=np.asarray(z_vec, dtype=float)), sub


class TestFeasiblePower:
    def setup_method(self):
        self.sc = generate(ScenarioConfig(n_comm=2, n_pos=1, n_sense=1, m_subbands=1,
                                          n_subframes=1, a_max=4, p_max_dbm=20.0),
                           seed=13)

    def test_zero_snr_always_feasible(self):
        prob, sub = _problem(self.sc, 0, {0: 0, 1: 0, 2: 0, 3: 0}, np.zeros(4))
        res = feasible_power(prob)
        assert res.feasible
        assert res.p is not None

    def test_single_user_boundary(self):
        sc = generate(ScenarioConfig(n_comm=1, n_pos=0, n_sense=0, m_subbands=1,
                                     n_subframes=1), seed=1)
        chi = sc.coeffs.chi_comm[0, 0, 0, 0]
        z_cap = sc.params.p_max_w * chi / sc.users[0].noise_w
        prob, _ = _problem(sc, 0, {0: 0}, [z_cap])
        assert feasible_power(prob).feasible
        prob_hi, _ = _problem(sc, 0, {0: 0}, [z_cap * (1 + 1e-6)])
        assert not feasible_power(prob_hi).feasible

    def test_witness_meets_constraints(self):
        rng = np.random.default_rng(3)
        sub = SubframeProblem(self.sc, 0, {0: 0, 1: 0, 2: 0, 3: 0})
        p_max = self.sc.params.p_max_w
        checked = 0
        for _ in range(60):
            p = rng.uniform(0, p_max / 4, sub.n_power)
            if any(float(r @ p) > 1e-9 * np.abs(r).max() * p_max
                   for r in sub._fairness):
                continue  # this power draw breaks decode-order fairness
            checked += 1
            z = sub.induced_z(p) * rng.uniform(0.2, 1.0)
            res = feasible_power(FeasibilityProblem(sub=sub, z=z))
            assert res.feasible  # witnessed by the drawn p itself
            g, h = sub.constraint_rows(z)
            assert np.all((g @ res.p - h) / sub.row_scales(z) <= 1e-8)
        assert checked >= 5

    def test_agrees_with_grid_oracle(self):
        # 2 BS-powered users: dense grid as the independent feasibility check
        sc = generate(ScenarioConfig(n_comm=1, n_pos=1, n_sense=0, m_subbands=1,
                                     n_subframes=1, a_max=2, p_max_dbm=20.0), seed=21)
        sub = SubframeProblem(sc, 0, {0: 0, 1: 0})
        grid = np.linspace(0, sc.params.p_max_w, 200)
        p1, p2 = np.meshgrid(grid, grid, indexing="ij")
        ok_budget = p1 + p2 <= sc.params.p_max_w
        rng = np.random.default_rng(17)
        for _ in range(25):
            ref = rng.uniform(0, sc.params.p_max_w, 2)
            z = sub.induced_z(ref) * rng.uniform(0.3, 1.8, sub.dim)
            g, h = sub.constraint_rows(z)
            vals = (g[:, 0, None, None] * p1[None] + g[:, 1, None, None] * p2[None])
            grid_ok = np.all(vals <= h[:, None, None] + 1e-15, axis=0) & ok_budget
            lp = feasible_power(FeasibilityProblem(sub=sub, z=z))
            if grid_ok.any():
                assert lp.feasible  # grid feasibility must imply LP feasibility
            if not lp.feasible:
                assert not grid_ok.any()

    def test_monotone_in_snr(self):
        rng = np.random.default_rng(8)
        sub = SubframeProblem(self.sc, 0, {0: 0, 1: 0, 2: 0, 3: 0})
        for _ in range(20):
            z = np.abs(rng.normal(size=sub.dim)) * [1.0, 1.0, 1e12, 1.0][: sub.dim]
            res = feasible_power(FeasibilityProblem(sub=sub, z=z))
            if not res.feasible:
                bigger = z * rng.uniform(1.0, 2.0, sub.dim)
                assert not feasible_power(FeasibilityProblem(sub=sub, z=bigger)).feasible

    def test_build_from_tensors(self, tiny_scenario):
        sc = tiny_scenario
        a = np.zeros((sc.n_users, 2, 2), dtype=np.int8)
        a[0, 0, 0] = a[2, 1, 0] = 1
        z = np.zeros((sc.n_users, 2, 2))
        prob = FeasibilityProblem.build(sc, 1, a, z)
        assert feasible_power(prob).feasible


class TestDcTerms:
    def _terms_at(self, scenario, placement, seed=0):
        rng = np.random.default_rng(seed)
        a = np.zeros((scenario.n_users, scenario.grid.m_subbands,
                      scenario.grid.n_subframes), dtype=np.int8)
        for k, (mi, ni) in placement.items():
            a[k, mi, ni] = 1
        p = np.zeros_like(a, dtype=float)
        for k in scenario.bs_powered_indices:
            p[k][a[k] == 1] = rng.uniform(0.0, scenario.params.p_max_w / 2)
        z = kpi.sinr_from_powers(scenario, a, p) * rng.uniform(0.2, 1.0)
        return dc_eval(scenario, a, z, p)

    def test_identity_quarter_difference(self):
        # 1/4 (Q+ - Q-) equals z * (interference + noise) exactly, tested on
        # random O(1) points where the subtraction is well conditioned
        rng = np.random.default_rng(12)
        sc = generate(ScenarioConfig(n_comm=2, n_pos=1, n_sense=1, m_subbands=1,
                                     n_subframes=1, a_max=4), seed=2)
        terms = self._terms_at(sc, {0: (0, 0), 1: (0, 0), 2: (0, 0), 3: (0, 0)})
        for rec in terms.records:
            dim = rec.q_plus.a.size
            for _ in range(200):
                x = rng.uniform(0.0, 3.0, dim)
                qa, qb = rec.q_plus.value(x), rec.q_minus.value(x)
                z_val = x[np.argmax(rec.q_plus.a != 0)]
                coord = int(np.argmax(np.abs(rec.q_plus.a) > 0))
                z_val = x[coord]
                interf = float(rec.q_plus.a @ x) + rec.q_plus.b - z_val
                lhs = 0.25 * (qa - qb)
                rhs = z_val * (interf)
                assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12)

    def test_values_at_origin(self):
        sc = generate(ScenarioConfig(n_comm=1, n_pos=0, n_sense=1, m_subbands=1,
                                     n_subframes=1, a_max=2), seed=2)
        terms = self._terms_at(sc, {0: (0, 0), 1: (0, 0)})
        for rec in terms.records:
            x0 = np.zeros(rec.q_plus.a.size)
            sigma = rec.q_plus.b
            assert rec.q_plus.value(x0) == pytest.approx(sigma**2, rel=1e-12)
            assert rec.q_minus.value(x0) == pytest.approx(sigma**2, rel=1e-12)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(6)
        form = QuadForm(rng.normal(size=5), rng.normal())
        x = rng.normal(size=5)
        g = form.grad(x)
        for i in range(5):
            h = 1e-6
            e = np.zeros(5)
            e[i] = h
            num = (form.value(x + e) - form.value(x - e)) / (2 * h)
            assert g[i] == pytest.approx(num, rel=1e-5, abs=1e-8)


class TestTaylorBound:
    def test_tight_at_anchor(self):
        rng = np.random.default_rng(2)
        form = QuadForm(rng.normal(size=4), 0.7)
        x0 = rng.normal(size=4)
        assert taylor_lower_bound(form, x0, x0) == pytest.approx(form.value(x0),
                                                                 rel=1e-14)

    def test_dominated_everywhere(self):
        rng = np.random.default_rng(3)
        violations = 0
        for _ in range(20):
            form = QuadForm(rng.normal(size=3), rng.normal())
            x0 = rng.normal(size=3)
            for _ in range(500):
                x = rng.normal(size=3) * 3
                lb = taylor_lower_bound(form, x0, x)
                if lb > form.value(x) * (1 + 1e-9) + 1e-9:
                    violations += 1
        assert violations == 0

    def test_constant_at_minimizer(self):
        form = QuadForm(np.array([1.0, -2.0]), 0.5)
        x0 = np.array([0.5, 0.5])  # a.x0 + b = 0: zero gradient
        assert form.inner(x0) == pytest.approx(0.0, abs=1e-15)
        for x in np.random.default_rng(1).normal(size=(20, 2)):
            assert taylor_lower_bound(form, x0, x) == pytest.approx(0.0, abs=1e-12)


class TestSolveP4:
    def test_single_comm_user_reaches_full_power(self):
        sc = generate(ScenarioConfig(n_comm=1, n_pos=0, n_sense=0, m_subbands=1,
                                     n_subframes=1, p_max_dbm=10.0,
                                     comm_distance_range=(900.0, 1000.0)), seed=5)
        sub = SubframeProblem(sc, 0, {0: 0})
        p0 = np.array([sc.params.p_max_w * 0.3])
        z0 = sub.induced_z(p0)
        best_obj = z0 * 0
        z, p, obj = z0, p0, sub.objective(z0)
        for _ in range(6):
            res = solve_p4_subframe(sub, z, p)
            z, p, obj = np.maximum(res.z, sub.induced_z(res.p)), res.p, res.objective
        assert p[0] == pytest.approx(sc.params.p_max_w, rel=1e-4)
        chi = sc.coeffs.chi_comm[0, 0, 0, 0]
        z_star = sc.params.p_max_w * chi / sc.users[0].noise_w
        assert sub.objective(sub.induced_z(p)) == pytest.approx(
            sub.objective(np.array([z_star])), abs=1e-6)

    def test_degenerate_no_power_returns_anchor(self):
        sc = generate(ScenarioConfig(n_comm=0, n_pos=0, n_sense=1, m_subbands=1,
                                     n_subframes=1), seed=5)
        sub = SubframeProblem(sc, 0, {0: 0})
        z0 = sub.induced_z(np.zeros(0))
        res = solve_p4_subframe(sub, z0, np.zeros(0))
        assert np.array_equal(res.z, z0)
        assert res.objective == pytest.approx(sub.objective(z0), rel=1e-14)

    def test_anchor_contract_violation_raises(self):
        sc = generate(ScenarioConfig(n_comm=1, n_pos=0, n_sense=0, m_subbands=1,
                                     n_subframes=1), seed=5)
        sub = SubframeProblem(sc, 0, {0: 0})
        z_bad = sub.initial_vertex() * 10.0
        with pytest.raises(AnchorInfeasibleError):
            solve_p4_subframe(sub, z_bad, np.zeros(1))

    def test_ascent_and_residuals_on_random_instances(self):
        rng = np.random.default_rng(44)
        for trial in range(15):
            counts = (int(rng.integers(0, 3)), int(rng.integers(0, 2)),
                      int(rng.integers(0, 2)))
            if sum(counts) == 0:
                counts = (1, 0, 0)
            sc = generate(ScenarioConfig(
                n_comm=counts[0], n_pos=counts[1], n_sense=counts[2],
                m_subbands=1, n_subframes=1, a_max=4,
                p_max_dbm=float(rng.uniform(10, 26))), seed=trial + 100)
            placement = {k: 0 for k in range(sc.n_users)}
            sub = SubframeProblem(sc, 0, placement)
            p0 = _fixed_power_vec(sub)
            z0 = sub.induced_z(p0)
            finite = all(np.isfinite(float(
                sub.entry_terms(e.coord, np.float64(z0[e.coord]), floored=False)))
                for e in sub.entries)
            fair = all(float(r @ p0) <= 1e-9 * np.abs(r).max() * sc.params.p_max_w
                       for r in sub._fairness)
            if not (finite and fair):
                continue
            res = solve_p4_subframe(sub, z0, p0)
            assert res.objective >= sub.objective(z0) - 1e-12
            g, h = sub.constraint_rows(res.z)
            if g.shape[0]:
                assert np.all((g @ res.p - h) / sub.row_scales(res.z) <= 1e-6)

    def test_two_variable_grid_oracle(self):
        # iterated convexified steps against a dense power grid
        rng = np.random.default_rng(29)
        gaps = []
        for trial in range(8):
            sc = generate(ScenarioConfig(
                n_comm=1, n_pos=1, n_sense=0, m_subbands=1, n_subframes=1,
                a_max=2, p_max_dbm=float(rng.uniform(8, 16))), seed=trial + 60)
            sub = SubframeProblem(sc, 0, {0: 0, 1: 0})
            grid = np.linspace(1e-9, sc.params.p_max_w, 200)
            best = -np.inf
            for p1 in grid:
                for p2 in grid:
                    if p1 + p2 > sc.params.p_max_w:
                        continue
                    best = max(best, sub.objective(sub.induced_z([p1, p2])))
            p_vec = _fixed_power_vec(sub)
            z_vec = sub.induced_z(p_vec)
            obj = sub.objective(z_vec)
            for _ in range(20):
                res = solve_p4_subframe(sub, z_vec, p_vec)
                z_new = np.maximum(res.z, sub.induced_z(res.p))
                if sub.objective(z_new) < res.objective:
                    z_new = res.z
                if sub.objective(z_new) <= obj + 1e-12:
                    break
                z_vec, p_vec, obj = z_new, res.p, sub.objective(z_new)
            assert obj >= best - 1e-3 * abs(best) - 1e-9
            gaps.append(obj - best)
