import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from perturbmap import maps, perturbations as P
from perturbmap.errors import ConfigError, DegenerateSignError, DomainError, EmptySetError


class TestSequences:
    def test_power_law_values(self):
        s = P.power_law(0.01, 0.5)
        assert s.value_at(0) == 0.01
        assert s.value_at(4) == pytest.approx(0.005, rel=1e-15)

    def test_scalar_and_block_agree(self):
        for s in (P.power_law(0.3, 1.7), P.double_exp(), P.two_phase_gamma(0.1)):
            block = s.values(0, 50)
            assert [s.value_at(k) for k in range(50)] == block.tolist()

    def test_double_exp_underflow(self):
        s = P.double_exp()
        assert s.value_at(3) == math.exp(-8)
        assert s.value_at(10) == 0.0 and s.value_at(500) == 0.0

    def test_table_and_alternating(self):
        t = P.table([1, 2, 3])
        assert t.values(0, 5).tolist() == [1, 2, 3, 0, 0]
        a = P.alternating(P.power_law(1.0, 1.0))
        assert a.values(1, 5).tolist() == [-1.0, 0.5, -1 / 3, 0.25]

    def test_config(self):
        s = P.from_config({"family": "alternating", "beta": {"family": "power_law", "eps": 0.1, "d": 1}})
        assert s.value_at(2) == pytest.approx(0.05)
        with pytest.raises(ConfigError) as ei:
            P.from_config({"family": "power_law", "eps": 0.1})
        assert ei.value.field == "perturbation.d"
        with pytest.raises(ConfigError):
            P.from_config({"family": "mystery"})


class TestL2:
    def test_fig2_exponents(self):
        assert P.l2_classify(P.power_law(0.01, 0.5), 1000).verdict == "not_l2"
        assert P.l2_classify(P.power_law(0.01, 8), 1000).verdict == "in_l2"

    def test_zero(self):
        r = P.l2_classify(P.zero(), 100)
        assert r.verdict == "in_l2" and r.partial_sum == 0.0

    def test_custom_table(self):
        assert P.l2_classify(P.table([0.1] * 5), 100).verdict == "undetermined"
        assert P.l2_classify(P.table([0.1] * 5, finite=True), 100).verdict == "in_l2"

    def test_horizon(self):
        with pytest.raises(DomainError):
            P.l2_classify(P.zero(), 10)

    def test_partial_sums_agree_with_tag(self):
        def partial(s, h):
            v = s.values(0, h + 1)
            return float(np.sum(v * v))

        s8 = P.power_law(0.01, 8)
        assert abs(partial(s8, 10 ** 6) - partial(s8, 10 ** 3)) < 1e-6
        s5 = P.power_law(0.01, 0.5)
        total = partial(s5, 10 ** 6)
        assert total - partial(s5, 10 ** 3) > 0.1 * total


class TestSignGroups:
    def test_hand_reduction(self):
        g = P.table([0, 1, 0.5, -0.3, 2, -0.1, -0.1, 0.4, -0.2, 0.1])
        r = P.sign_groups(g, 100)
        assert r.betas[:4] == (1.5, 0.3, 2.0, 0.2)
        assert r.signs[:4] == (1, -1, 1, -1)
        assert r.first_index == 1

    def test_alternating_singletons(self):
        g = P.alternating(P.power_law(1.0, 1.0), even_positive=True)
        r = P.sign_groups(g, 200)
        assert r.first_index == 2
        assert list(r.betas[:-1]) == [1.0 / k for k in range(2, 200)]

    def test_two_phase_blocks(self):
        eps = 0.1
        r = P.sign_groups(P.two_phase_gamma(eps), 200, start=3)
        for k, n in enumerate(range(1, 40)):
            assert r.betas[2 * k] == pytest.approx(eps / (2 * n) ** 2, rel=1e-13)
            assert r.betas[2 * k + 1] == pytest.approx(math.sqrt(1 + eps) / (2 * n) - 1 / (2 * (n + 1)) ** 4,
                                                       rel=1e-13)

    def test_degenerate(self):
        with pytest.raises(DegenerateSignError):
            P.sign_groups(P.power_law(1.0, 1.0), 200)
        with pytest.raises(DegenerateSignError):
            P.sign_groups(P.table([1, -1, -2]), 200)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1, 1, allow_nan=False).filter(lambda v: abs(v) > 1e-3), min_size=8, max_size=60))
    def test_reconstruction(self, vals):
        g = P.table([0.0] + vals)
        h = len(vals)
        try:
            r = P.sign_groups(g, h)
        except DegenerateSignError:
            return
        v = g.values(0, h + 1)
        lo = r.first_index
        for b, beta, sign in zip(r.boundaries, r.betas, r.signs):
            acc = 0.0
            for i in range(lo, b + 1):
                acc += float(v[i])
            assert abs(acc) == beta and np.sign(acc) == sign
            lo = b + 1


class TestBetaCondition:
    def test_sqrt_nonincreasing(self):
        g = P.alternating(P.power_law(0.5, 1.0))
        r = P.sign_groups(g, 500)
        assert P.check_beta_condition(maps.sqrt_map(), r).verdict == "holds"

    def test_two_phase_fails(self):
        r = P.sign_groups(P.two_phase_gamma(0.1), 500, start=3)
        rep = P.check_beta_condition(maps.sqrt_map(), r)
        assert rep.verdict == "fails" and rep.witness["counterexample"] == 10

    def test_linear_growth(self):
        mu = 0.2
        m = maps.polynomial([0, 1 + mu, -1.0], domain_hint=2.0)  # f(x) ~ (1 + mu) x near 0
        g = P.alternating(P.power_law(0.01, 1.0))
        r = P.sign_groups(g, 500)
        for bp, bn in r.pairs()[10:]:
            assert (1 + mu) * bp >= bn
        assert P.check_beta_condition(m, r).verdict == "holds"

    def test_no_pairs_is_undetermined(self):
        g = P.table([0, 1, -1, 1, -1])
        r = P.sign_groups(g, 100)
        assert P.check_beta_condition(maps.sqrt_map(), r).verdict == "undetermined"


class TestIncrement:
    def test_sqrt(self):
        assert P.check_increment_condition(maps.sqrt_map(), 0.25).verdict == "holds"

    def test_identity_not_certified(self):
        rep = P.check_increment_condition(maps.polynomial([0, 1]), 0.5)
        assert rep.verdict != "holds"

    def test_quadratic(self):
        rep = P.check_increment_condition(maps.polynomial([0, 1, 1]), 0.5)
        assert rep.verdict == "holds"
        # a(2x + a) at the smallest node pair
        h = 0.5 / 201
        assert rep.witness["min_margin"] == pytest.approx(h * 3 * h, rel=1e-6)

    def test_contracting_map_fails_with_witness(self):
        rep = P.check_increment_condition(maps.holling(2.0, 1.0), 0.9)
        assert rep.verdict == "fails"
        x, a = rep.witness["counterexample"]
        m = maps.holling(2.0, 1.0)
        assert m.evaluate(x + a) - m.evaluate(x) < a


class TestPersistence:
    def test_holling(self):
        b = P.persistence_threshold(maps.holling(2.0, 1.0), 0.05)
        assert b == pytest.approx((0.95 - math.sqrt(0.7025)) / 2, abs=1e-11)
        assert b == pytest.approx(0.0559, abs=1e-4)

    def test_quartic(self):
        b = P.persistence_threshold(maps.quartic_map(), 0.01)
        oracle = brentq(lambda x: x * x - x ** 3 - x ** 4 - 0.01, 1e-6, 0.5, xtol=1e-15)
        assert b == pytest.approx(0.1064675299267152, abs=1e-11)
        assert b == pytest.approx(oracle, abs=1e-11)

    def test_zero(self):
        assert P.persistence_threshold(maps.sqrt_map(), 0.0) == 0.0

    def test_empty(self):
        with pytest.raises(EmptySetError):
            P.persistence_threshold(maps.holling(2.0, 1.0), 0.2)
        with pytest.raises(DomainError):
            P.persistence_threshold(maps.holling(2.0, 1.0), -0.1)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.0, 0.17), st.floats(0.0, 0.17))
    def test_monotone(self, g1, g2):
        m = maps.holling(2.0, 1.0)
        lo, hi = sorted((g1, g2))
        assert P.persistence_threshold(m, lo) <= P.persistence_threshold(m, hi)

    def test_composite(self):
        rep = P.check_persistence_condition(maps.holling(2.0, 1.0), 0.05)
        assert rep.verdict == "holds"
        assert rep.witness["b"] == pytest.approx(0.0559, abs=1e-4)
        bad = P.check_persistence_condition(maps.quartic_map(), 0.01)
        assert bad.verdict == "fails"


class TestSigmaF:
    def test_double_exp_M2(self):
        rep = P.check_sigmaF(maps.quartic_map(), P.double_exp(), 2.0, (1, 60))
        assert rep.verdict == "holds" and rep.witness["L"] == 1

    def test_remark_quadratic_growth(self):
        # F(x) = x^2 (1.5 - 2.5 x) lies between x^2 and 2x^2 near zero
        m = maps.polynomial([0, 1, 1.5, -2.5], domain_hint=1.0)
        q = 0.5
        s = P.PerturbationSeq(lambda ns: q ** np.exp2(ns.astype(float)), "custom", "nonnegative")
        rep = P.check_sigmaF(m, s, 1.0, (1, 30))
        assert rep.witness["L"] == 2
        assert P.check_sigmaF(m, s, 1.0, (2, 30)).verdict == "holds"

    @pytest.mark.parametrize("d", [0.5, 8.0])
    def test_power_law_fails_every_M(self, d):
        s = P.power_law(0.01, d)
        for M in 10.0 ** np.arange(0, 7):
            rep = P.check_sigmaF(maps.quartic_map(), s, M, (1, 10 ** 5))
            assert rep.verdict == "fails" and rep.witness["counterexample"] is not None

    def test_monotone_in_M(self):
        m = maps.quartic_map()
        s = P.double_exp()
        # from n = 2 on, F is nondecreasing on [0, 4 max sigma] = [0, 4 e^-4]
        xs = np.linspace(0, 4 * math.exp(-4), 1000)
        assert np.all(np.diff(m.gap(xs)) >= 0)
        assert P.check_sigmaF(m, s, 2.0, (2, 60)).verdict == "holds"
        for M in (2.5, 3.0, 4.0):
            assert P.check_sigmaF(m, s, M, (2, 60)).verdict == "holds"

    def test_search(self):
        m = maps.quartic_map()
        M, L = P.search_M(m, P.double_exp(), [0.5, 1, 2, 4], (1, 60))
        assert M <= 2
        assert P.search_M(m, P.power_law(0.01, 8), [1, 10, 100, 1e3, 1e4, 1e5, 1e6], (1, 10 ** 5)) is None
        assert P.search_M(m, P.zero(), [0.5, 1.0], (1, 60)) == (0.5, 1)

    def test_report_invariant(self):
        with pytest.raises(ValueError):
            P.ConditionReport("x", "fails", {}, {})
