import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from perturbmap import dynamics as D, maps, noise as N, perturbations as P
from perturbmap.errors import ConfigError, PreconditionError, SimulationOverflow

GOLDEN = 0.6180339887498949
PREC = 120


def decay_orbit(horizon=39, precision=PREC, **kw):
    cfg = D.SimConfig(x0=1.0, start=1, horizon=horizon, window=10, tol_0=kw.pop("tol_0", 1e-4), **kw)
    return D.iterate_deterministic(maps.sqrt_map(), P.quartic_decay_gamma(), cfg, K=1.0, precision=precision)


class TestClosedForms:
    def test_quartic_decay_orbit(self):
        t = decay_orbit()
        n = t.n.astype(float)
        assert t.n[0] == 1 and t.n[-1] == 40
        assert np.max(np.abs(t.x * n ** 4 - 1)) <= 1e-9
        assert t.classification == D.Limit.ToZero

    def test_float_engine_loses_the_decay_orbit(self):
        # each step multiplies relative error by about n^2 / 2, so double precision cannot follow 1/n^4
        cfg = D.SimConfig(x0=1.0, start=1, horizon=39)
        t = D.iterate_deterministic(maps.sqrt_map(), P.quartic_decay_gamma(), cfg)
        rel = np.abs(t.x * t.n.astype(float) ** 4 - 1)
        assert rel[:5].max() < 1e-12 and rel.max() > 1e-3

    def test_two_phase_orbit(self):
        eps = 0.1
        cfg = D.SimConfig(x0=1 / 16, start=2, horizon=40, window=5, tol_0=1e-3, tol_K=1e-2)
        t = D.iterate_deterministic(maps.sqrt_map(), P.two_phase_gamma(eps), cfg, K=1.0, precision=PREC)
        n = t.n
        ref = np.where(n % 2 == 0, 1.0 / n.astype(float) ** 4, (1 + eps) / (n - 1.0) ** 2)
        assert np.max(np.abs(t.x / ref - 1)) <= 1e-9
        assert t.classification == D.Limit.ToZero

    def test_decay_orbit_classification_at_100(self):
        # the orbit amplifies rounding by about n^2 / 2 per step; 100 steps need ~300 digits
        t = decay_orbit(horizon=99, precision=400)
        assert t.final_value == pytest.approx(1e-8, rel=1e-9)
        assert t.classification == D.Limit.ToZero

    def test_precision_needs_decimal_forms(self):
        m = maps.MapSpec(np.sqrt, lambda x: np.sqrt(x) - x, 4.0, "plain")
        with pytest.raises(PreconditionError):
            D.iterate_deterministic(m, P.zero(), D.SimConfig(x0=1.0, horizon=3), precision=50)

    def test_decimal_and_float_paths_agree_on_stable_orbits(self):
        m = maps.quartic_map()
        cfg = D.SimConfig(x0=0.001, horizon=300)
        g = P.power_law(0.001, 1.0)
        a = D.iterate_deterministic(m, g, cfg)
        b = D.iterate_deterministic(m, g, cfg, precision=40)
        np.testing.assert_allclose(a.x, b.x, rtol=1e-11)


class TestBasicOrbits:
    def test_equilibrium_is_fixed(self):
        m = maps.quartic_map()
        K = maps.equilibrium(m)
        t = D.iterate_deterministic(m, P.zero(), D.SimConfig(x0=K, horizon=500), K=K)
        # K carries the bisection tolerance; the orbit settles on the float fixed point next to it
        assert np.max(np.abs(t.x - K)) <= 1e-12 * K
        assert np.ptp(t.x[10:]) == 0.0
        assert t.classification == D.Limit.ToK

    def test_figure1_rise(self):
        m = maps.quartic_map()
        K = maps.equilibrium(m)
        t = D.iterate_deterministic(m, P.zero(), D.SimConfig(x0=0.001, horizon=2000), K=K)
        assert np.all(np.diff(t.x) >= 0)
        assert t.classification == D.Limit.ToK

    def test_zero_is_absorbing_without_noise(self):
        m = maps.quartic_map()
        t = D.iterate_stochastic(m, P.zero(), N.uniform(), N.RngStream(1, 0), D.SimConfig(x0=0.0, horizon=200))
        assert np.all(t.x == 0)

    def test_undecided_window(self):
        cfg = D.SimConfig(x0=0.1, window=4)
        t = D.Trajectory(np.arange(4), np.array([0.3, 0.01, 0.3, 0.01]), np.zeros(4), np.zeros(4), 0.01, 0,
                         np.array([0.3, 0.01, 0.3, 0.01]))
        assert D.classify(t, GOLDEN, cfg) == D.Limit.Undecided

    def test_overflow(self):
        m = maps.polynomial([0, 2.0], domain_hint=1.0)
        with pytest.raises(SimulationOverflow):
            D.iterate_deterministic(m, P.zero(), D.SimConfig(x0=0.5, horizon=100))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            D.SimConfig(x0=0.1, horizon=0)
        with pytest.raises(ConfigError):
            D.SimConfig(x0=0.1, tol_0=1e-2, tol_K=1e-3)
        with pytest.raises(ConfigError):
            D.iterate_deterministic(maps.quartic_map(), P.zero(), D.SimConfig(x0=0.1, horizon=5, tol_K=0.4),
                                    K=GOLDEN)

    def test_stride_records_window(self):
        m = maps.quartic_map()
        t = D.iterate_deterministic(m, P.zero(), D.SimConfig(x0=0.001, horizon=1000, record_stride=100, window=5))
        assert t.n.tolist() == list(range(0, 1000, 100)) + [996, 997, 998, 999, 1000]


class TestStochastic:
    def cfg(self):
        return D.SimConfig(x0=0.001, horizon=3000)

    def test_replay(self):
        m = maps.quartic_map()
        s = P.power_law(0.01, 0.5)
        a = D.iterate_stochastic(m, s, N.uniform(), N.RngStream(42, 3), self.cfg())
        b = D.iterate_stochastic(m, s, N.uniform(), N.RngStream(42, 3), self.cfg())
        assert a.to_csv() == b.to_csv()
        c = D.iterate_stochastic(m, s, N.uniform(), N.RngStream(42, 4), self.cfg())
        assert a.to_csv() != c.to_csv()

    def test_single_run_equals_batch_column(self):
        m = maps.quartic_map()
        s = P.power_law(0.05, 1.0)
        streams = [N.RngStream(9, i) for i in range(6)]
        res = D.simulate_batch(m, D.stochastic_increments(s, N.uniform(), streams), 6, self.cfg())
        for i in (0, 5):
            t = D.iterate_stochastic(m, s, N.uniform(), streams[i], self.cfg())
            assert t.final_value == res.final[i] and t.clamp_count == res.clamp_count[i]

    def test_noise_convention(self):
        # x_1 = f(x_0) + sigma_0 * xi_1 with xi_1 at counter 1
        m = maps.quartic_map()
        s = P.power_law(0.3, 1.0)
        r = N.RngStream(5, 0)
        t = D.iterate_stochastic(m, s, N.uniform(), r, D.SimConfig(x0=0.2, horizon=2))
        xi1 = 2 * r.at(1) - 1
        assert t.x[1] == max(float(m.evaluate(np.float64(0.2))) + 0.3 * xi1, 0.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2 ** 32), st.floats(0.05, 0.5), st.floats(0.0, 0.6))
    def test_nonnegative_and_clamp_accounting(self, seed, eps, x0):
        m = maps.quartic_map()
        s = P.power_law(eps, 0.5)
        t = D.iterate_stochastic(m, s, N.uniform(), N.RngStream(seed, 0), D.SimConfig(x0=x0, horizon=400))
        assert np.all(t.x >= 0)
        pre = m.evaluate(t.x[:-1]) + t.perturbation[1:]
        np.testing.assert_array_equal(t.clamped[1:], (pre < 0).astype(np.int8))
        assert t.clamp_count == int(t.clamped.sum())
        np.testing.assert_array_equal(t.x[1:], np.where(pre < 0, 0.0, pre))


class TestTrajectoryChecks:
    def test_invariant_constant(self):
        t = D.iterate_deterministic(maps.quartic_map(), P.zero(), D.SimConfig(x0=GOLDEN, horizon=50))
        r = D.check_invariant_interval(t, 0.05, GOLDEN, lam=0.55)
        assert r.holds and r.entry_index == 0

    def test_invariant_deterministic_run(self):
        m = maps.quartic_map()
        t = D.iterate_deterministic(m, P.zero(), D.SimConfig(x0=0.001, horizon=3000))
        r = D.check_invariant_interval(t, 0.05, GOLDEN)
        assert r.holds and r.entry_index is not None and t.x[r.entry_index] >= 0.05

    def test_invariant_vacuous(self):
        t = decay_orbit()
        r = D.check_invariant_interval(t, 0.05, 1.0, n1=5)
        assert r.holds and r.entry_index is None

    def test_invariant_violation_detected(self):
        t = D.Trajectory(np.arange(5), np.array([0.01, 0.3, 0.4, 0.01, 0.3]), np.zeros(5), np.zeros(5), 0.3, 0,
                         np.zeros(1))
        r = D.check_invariant_interval(t, 0.05, GOLDEN)
        assert not r.holds and r.entry_index == 1 and r.violation_index == 3

    def test_invariant_precondition(self):
        t = D.iterate_deterministic(maps.quartic_map(), P.zero(), D.SimConfig(x0=GOLDEN, horizon=5))
        with pytest.raises(PreconditionError):
            D.check_invariant_interval(t, 0.2, GOLDEN, lam=0.55)

    def test_engine_interval_tracking_matches_check(self):
        m = maps.quartic_map()
        cfg = D.SimConfig(x0=0.001, horizon=3000, eps0=0.05, n1=10)
        t = D.iterate_stochastic(m, P.power_law(0.01, 0.5), N.uniform(), N.RngStream(3, 1), cfg, K=GOLDEN)
        r = D.check_invariant_interval(t, 0.05, GOLDEN, n1=10)
        assert t.entry_index == r.entry_index and t.exit_index == r.violation_index

    def test_persistence_worst_case(self):
        m = maps.holling(2.0, 1.0)
        b = P.persistence_threshold(m, 0.05)
        g = P.PerturbationSeq(lambda ns: np.full(ns.shape, -0.05), "constant", "nonpositive")
        t = D.iterate_deterministic(m, g, D.SimConfig(x0=0.2, horizon=10_000))
        r = D.check_persistence(t, b)
        assert r.holds and r.minimum > b

    def test_persistence_violation_index(self):
        m = maps.holling(2.0, 1.0)
        g = P.PerturbationSeq(lambda ns: np.full(ns.shape, -0.05), "constant", "nonpositive")
        t = D.iterate_deterministic(m, g, D.SimConfig(x0=0.03, horizon=100))
        r = D.check_persistence(t, 0.0559)
        assert not r.holds and r.violation_index == 0

    def test_unperturbed_persistence(self):
        t = D.iterate_deterministic(maps.holling(2.0, 1.0), P.zero(), D.SimConfig(x0=0.1, horizon=500))
        assert D.check_persistence(t, 0.05).holds

    def test_alternating_liminf_positive(self):
        # sqrt map, gamma_n = (-1)^n 0.1/n with nonincreasing beta
        g = P.alternating(P.power_law(0.1, 1.0))
        t = D.iterate_deterministic(maps.sqrt_map(), g, D.SimConfig(x0=0.5, horizon=20_000))
        assert t.x[len(t.x) // 2:].min() > 0


class TestCsv:
    def test_round_trip_bytes(self):
        t = D.iterate_stochastic(maps.quartic_map(), P.power_law(0.01, 0.5), N.uniform(), N.RngStream(1, 2),
                                 D.SimConfig(x0=0.001, horizon=500))
        text = t.to_csv()
        assert text.startswith("n,x,perturbation,clamped\n")
        assert D.write_trajectory_csv(D.read_trajectory_csv(text)) == text

    def test_header_required(self):
        with pytest.raises(ValueError):
            D.read_trajectory_csv("1,2,3,0\n")
