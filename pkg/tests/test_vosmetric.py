import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vosmdma import kpi, vosmetric
from vosmdma.errors import InvalidSpecError
from vosmdma.scenario import ScenarioConfig, generate
from vosmdma.types import Direction, KpiSpec
from vosmdma.vosmetric import (LOG_FLOOR, log_normalize, log_objective, log_value_array,
                               normalize, user_vos, z_min)

HIGH = Direction.HIGH
LOW = Direction.LOW


def spec(direction, target, alpha, beta, weight=1.0):
    return KpiSpec(direction, target, alpha, beta, weight)


class TestNormalize:
    def test_high_at_target_is_exactly_one(self):
        s = spec(HIGH, 4.0, 0.3, 0.3)
        assert normalize(s.target, s) == 1.0

    def test_high_at_range_floor_is_exactly_zero(self):
        s = spec(HIGH, 4.0, 0.3, 0.3)
        assert normalize(s.beta * s.target, s) == 0.0

    def test_low_breakpoints(self):
        s = spec(LOW, 2.5, 0.7, 0.4)
        assert normalize(s.target, s) == 1.0
        assert normalize(s.target / s.beta, s) == 0.0
        assert normalize(0.3 * s.target, s) == 1.0

    def test_high_midrange_matches_high_precision_value(self):
        # frozen from a 50-digit evaluation of the closed form
        s = spec(HIGH, 4.0, 0.3, 0.3)
        assert normalize(0.7 * 4.0, s) == pytest.approx(
            0.8448810311523457518, rel=1e-13)

    def test_low_midrange_matches_high_precision_value(self):
        s = spec(LOW, 1.0, 0.45, 0.35)
        assert normalize(2.2, s) == pytest.approx(0.6095158052201195094, rel=1e-13)

    @pytest.mark.parametrize("direction", [HIGH, LOW])
    def test_continuity_at_saturation_breakpoint(self, direction):
        # the value-1 end is approached with bounded slope: tight probes agree
        s = spec(direction, 3.0, 0.8, 0.25)
        q0 = s.target
        inner = normalize(q0 * (1 - 1e-12 if direction is HIGH else 1 + 1e-12), s)
        assert abs(inner - 1.0) < 1e-11

    @pytest.mark.parametrize("direction", [HIGH, LOW])
    def test_continuity_at_zero_breakpoint(self, direction):
        # the value-0 end is a power law (offset**alpha): verify the one-sided
        # limit by a shrinking-offset sequence instead of a single probe
        s = spec(direction, 3.0, 0.8, 0.25)
        q0 = s.beta * s.target if direction is HIGH else s.target / s.beta
        sign = 1.0 if direction is HIGH else -1.0
        offsets = [1e-4, 1e-6, 1e-8, 1e-10]
        vals = [normalize(q0 * (1 + sign * h), s) for h in offsets]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-6
        # decay rate consistent with the alpha power law
        for a, b in zip(vals, vals[1:]):
            ratio = b / a
            assert ratio == pytest.approx(100.0 ** -s.alpha, rel=0.2)

    def test_monotone_scan_high(self):
        s = spec(HIGH, 4.0, 1.3, 0.2)
        qs = np.linspace(0.0, 8.0, 4001)
        vals = [normalize(q, s) for q in qs]
        assert all(b >= a - 1e-14 for a, b in zip(vals, vals[1:]))

    def test_monotone_scan_low(self):
        s = spec(LOW, 4.0, 1.3, 0.2)
        qs = np.linspace(1e-6, 40.0, 4001)
        vals = [normalize(q, s) for q in qs]
        assert all(b <= a + 1e-14 for a, b in zip(vals, vals[1:]))

    @given(alpha=st.floats(0.01, 3.0), beta=st.floats(0.02, 0.95),
           ratio=st.floats(0.0, 3.0))
    @settings(max_examples=200, deadline=None)
    def test_range_and_bounds(self, alpha, beta, ratio):
        s = spec(HIGH, 5.0, alpha, beta)
        v = normalize(ratio * s.target, s)
        assert 0.0 <= v <= 1.0
        if ratio >= 1.0:
            assert v == 1.0
        if ratio <= beta:
            assert v == 0.0


class TestLogNormalize:
    def test_saturated_is_zero(self):
        s = spec(HIGH, 4.0, 0.3, 0.3)
        assert log_normalize(5.0, s).value == 0.0
        assert not log_normalize(5.0, s).below_range

    def test_below_range_sentinel(self):
        s = spec(HIGH, 4.0, 0.3, 0.3)
        lv = log_normalize(0.5, s)
        assert lv.below_range
        assert lv.floored() == LOG_FLOOR

    def test_matches_log_of_normalize(self):
        s = spec(LOW, 2.0, 0.6, 0.3)
        for q in np.linspace(2.1, 6.5, 50):
            assert log_normalize(q, s).value == pytest.approx(
                math.log(normalize(q, s)), rel=1e-12)

    @pytest.mark.parametrize("direction", [HIGH, LOW])
    def test_concavity_second_differences(self, direction):
        # second differences stay below +1e-6 on the concavity interval
        rng = np.random.default_rng(42)
        for _ in range(20):
            alpha = float(rng.uniform(0.05, 2.0))
            beta = float(rng.uniform(0.05, 0.9))
            s = spec(direction, float(rng.uniform(0.5, 10.0)), alpha, beta)
            if direction is HIGH:
                lo, hi = s.beta * s.target * 1.0001, s.target * 3.0
            else:
                lo, hi = s.target * 1e-3, s.target / s.beta * 0.9999
            qs = np.linspace(lo, hi, 400)
            f = log_value_array(qs, s)
            d2 = f[:-2] - 2 * f[1:-1] + f[2:]
            finite = np.isfinite(d2)
            assert np.all(d2[finite] <= 1e-6)

    def test_monotone_in_q(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            s = spec(HIGH, float(rng.uniform(1, 8)), float(rng.uniform(0.05, 2)),
                     float(rng.uniform(0.05, 0.9)))
            qs = np.sort(rng.uniform(0, 3 * s.target, 200))
            f = log_value_array(qs, s)
            with np.errstate(invalid="ignore"):
                diffs = np.diff(f)
            assert np.all(diffs[np.isfinite(f[:-1])] >= -1e-12)

    def test_derivative_matches_finite_differences(self):
        for s in [spec(HIGH, 4.0, 0.3, 0.3), spec(LOW, 2.0, 0.9, 0.25)]:
            if s.direction is HIGH:
                qs = np.linspace(s.beta * s.target * 1.05, s.target * 0.95, 17)
            else:
                qs = np.linspace(s.target * 1.05, s.target / s.beta * 0.95, 17)
            for q in qs:
                h = 1e-6 * q
                num = (float(log_value_array(np.float64(q + h), s))
                       - float(log_value_array(np.float64(q - h), s))) / (2 * h)
                assert vosmetric.d_log_value_dq(q, s) == pytest.approx(num, rel=1e-5)


class TestUserVos:
    def test_all_ones(self):
        assert user_vos([(1.0, 0.4), (1.0, 2.0)]) == 1.0

    def test_zero_with_positive_weight(self):
        assert user_vos([(0.0, 0.1), (1.0, 1.0)]) == 0.0

    def test_zero_weight_is_neutral(self):
        assert user_vos([(0.0, 0.0), (0.5, 1.0)]) == 0.5

    def test_weighted_product(self):
        assert user_vos([(0.5, 1.0), (0.25, 0.5)]) == pytest.approx(0.25, rel=1e-14)


class TestZMin:
    def test_comm_closed_form(self, tiny_scenario):
        user = tiny_scenario.users[0]
        expected = 2.0 ** (user.kpis[0].beta * user.kpis[0].target) - 1.0
        assert z_min(tiny_scenario, 0, 1, 1) == pytest.approx(expected, rel=1e-14)

    def test_comm_frozen_value(self):
        # beta*target = 1.2 -> 2**1.2 - 1, frozen from a 50-digit evaluation
        assert 2.0 ** 1.2 - 1.0 == pytest.approx(1.2973967099940700136, rel=1e-14)

    def test_unassigned_is_zero(self, tiny_scenario):
        assert z_min(tiny_scenario, 0, 1, 1, assigned=False) == 0.0

    def test_pos_matches_componentwise_max(self, tiny_scenario):
        k = tiny_scenario.pos_indices[0]
        consts = kpi.crb_constants(tiny_scenario, k, 1, 1)
        expected = max(s.beta * c / s.target
                       for s, c in zip(tiny_scenario.users[k].kpis, consts.as_tuple()))
        assert z_min(tiny_scenario, k, 1, 1) == pytest.approx(expected, rel=1e-12)

    def test_sense_clamped_at_zero_when_unreachable(self, tiny_scenario):
        # default caps make beta*target < P_FA: detection value never hits zero
        k = tiny_scenario.sense_indices[0]
        u = tiny_scenario.users[k]
        assert u.kpis[0].beta * u.kpis[0].target < u.false_alarm
        assert z_min(tiny_scenario, k, 1, 1) == 0.0

    def test_sense_positive_threshold(self):
        sc = generate(ScenarioConfig(n_comm=0, n_pos=0, n_sense=1, beta_cap=0.6,
                                     m_subbands=1, n_subframes=1), seed=8)
        u = sc.users[0]
        zm = z_min(sc, 0, 1, 1)
        level = u.kpis[0].beta * u.kpis[0].target
        if level > u.false_alarm:
            assert zm > 0
            assert float(kpi.detect_prob(zm * (1 + 1e-9), u.false_alarm)) > level
            assert float(kpi.detect_prob(zm * (1 - 1e-9), u.false_alarm)) < level

    def test_sense_invalid_range_threshold(self, tiny_scenario):
        import dataclasses
        from types import SimpleNamespace

        k = tiny_scenario.sense_indices[0]
        user = tiny_scenario.users[k]
        bad_spec = dataclasses.replace(user.kpis[0], target=1.2, beta=0.99)
        bad_user = dataclasses.replace(user, kpis=(bad_spec, user.kpis[1]))
        stub = SimpleNamespace(users={k: bad_user})
        with pytest.raises(InvalidSpecError):
            z_min(stub, k, 1, 1)


class TestLogObjective:
    def test_all_saturated_gives_zero(self, tiny_scenario):
        sc = tiny_scenario
        a = np.zeros((sc.n_users, 2, 2), dtype=np.int8)
        z = np.zeros((sc.n_users, 2, 2))
        for k in range(sc.n_users):
            a[k, k % 2, 0] = 1  # everyone in sub-frame 1: latency at target
            z[k, k % 2, 0] = 1e15 if k in sc.pos_indices else 1e9
        out = log_objective(sc, a, z)
        assert out.exact.value == 0.0
        assert out.floored == 0.0

    def test_below_range_sentinel_propagates_to_total(self, tiny_scenario):
        sc = tiny_scenario
        a = np.zeros((sc.n_users, 2, 2), dtype=np.int8)
        z = np.zeros((sc.n_users, 2, 2))
        a[0, 0, 0] = 1  # comm user at z=0: rate below range
        out = log_objective(sc, a, z)
        assert out.exact.below_range
        assert out.floored <= LOG_FLOOR

    def test_matches_per_user_aggregation(self, tiny_scenario):
        # independent recomputation through the per-user weighted product
        sc = tiny_scenario
        rng = np.random.default_rng(5)
        a = np.zeros((sc.n_users, 2, 2), dtype=np.int8)
        z = np.zeros((sc.n_users, 2, 2))
        slots = [(m, n) for m in range(2) for n in range(2)]
        for k in range(sc.n_users):
            mi, ni = slots[k % 4]
            a[k, mi, ni] = 1
            z[k, mi, ni] = {0: 3.0, 1: 9.0}.get(k, 40.0 if k in sc.pos_indices else 5.0)
        total = 0.0
        for u in sc.users:
            mi, ni = [(m, n) for m in range(2) for n in range(2) if a[u.index, m, n]][0]
            qs = kpi.achieved_kpis(sc, u.index, mi + 1, ni + 1, z[u.index, mi, ni])
            vals = [(normalize(q, s), s.weight) for s, q in zip(u.kpis, qs)]
            total += math.log(user_vos(vals))
        out = log_objective(sc, a, z)
        assert out.exact.value == pytest.approx(total, abs=1e-10)

    def test_monotone_in_z(self, tiny_scenario):
        # raising any coordinate never lowers the objective
        sc = tiny_scenario
        rng = np.random.default_rng(9)
        a = np.zeros((sc.n_users, 2, 2), dtype=np.int8)
        for k in range(sc.n_users):
            a[k, k % 2, k % 2] = 1
        for _ in range(40):
            z = np.zeros((sc.n_users, 2, 2))
            for k in range(sc.n_users):
                sel = a[k] == 1
                z[k][sel] = rng.uniform(0, 30) if k not in sc.pos_indices else rng.uniform(0, 100)
            base = log_objective(sc, a, z).floored
            k = int(rng.integers(sc.n_users))
            z2 = z.copy()
            z2[k][a[k] == 1] *= 1.0 + rng.uniform(0.01, 0.5)
            assert log_objective(sc, a, z2).floored >= base - 1e-9
