import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from beadspring.control import ControlSignal, plan_path, synthesize_control
from beadspring.diagnostics import (
    LyapunovParams,
    bad_set_radius,
    choose_lyapunov_params,
    ergodic_convergence,
    escape_time_stats,
    estimate_drift,
    hookean_decay_test,
    hormander_matrix,
    hormander_rank_check,
    ks_distance,
    lyapunov_value,
    ou_statistics,
    tube_occupancy,
    wilson_interval,
)
from beadspring.dynamics import SimParams, SystemState
from beadspring.potentials import hookean
from beadspring.spectral_fluid import FluidParams, ModeSet, build_mode_set, stationary_variance


def zero_reference(n_modes, duration):
    return ControlSignal(np.array([0.0, duration]), np.zeros((2, n_modes)), 0.0)


class TestLyapunov:
    def test_inside_core_ball(self):
        lp = LyapunovParams(R0=1.0, eta=1.0, delta=0.1, a=0.1, C1=1.0, C2=1.0, k_min=1.0)
        assert lyapunov_value(SystemState.at([0.1, 0.0], [0.0]), lp) == 1.0

    def test_outside(self):
        lp = LyapunovParams(R0=1.0, eta=1.0, delta=0.1, a=0.1, C1=1.0, C2=1.0, k_min=1.0)
        assert lyapunov_value(SystemState.at([2.0, 0.0], [3.0]), lp) == 13.0

    def test_choose_unit_parameters(self):
        lp = choose_lyapunov_params(1.0, FluidParams(1.0, 1.0, 1.0), ModeSet([(1, 0)], [1.0]), 1.0, 0.1)
        assert lp.eta == pytest.approx(1 / 0.81)
        assert lp.a == pytest.approx(0.1)
        assert lp.C1 == pytest.approx(1 / 0.81)
        assert lp.C2 == pytest.approx(2.0 + 1 / 0.81)

    @pytest.mark.parametrize("delta", [0.0, 1.0, 1.5, -0.2])
    def test_delta_out_of_range(self, delta):
        with pytest.raises(ValueError, match=r"min\(1, lam\^2 nu k_min\^2 / gamma\)"):
            choose_lyapunov_params(1.0, FluidParams(1.0, 1.0, 1.0), ModeSet([(1, 0)], [1.0]), 1.0, delta)

    def test_bound_from_stiff_spring(self, fp, ms):
        # theta_min / gamma = 1 / 4 here
        choose_lyapunov_params(4.0, fp, ms, 1.0, 0.24)
        with pytest.raises(ValueError):
            choose_lyapunov_params(4.0, fp, ms, 1.0, 0.26)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 10), st.floats(0.01, 0.99))
    def test_eta_solves_quadratic_condition(self, gamma, frac):
        fp, ms = FluidParams(1.0, 1.0, 1.0), ModeSet([(1, 0), (1, 1)], [1.0, 0.5])
        theta = 1.0
        delta = frac * min(1.0, theta / gamma)
        lp = choose_lyapunov_params(gamma, fp, ms, 1.0, delta)
        assert lp.eta * gamma * (1 - delta) * (theta - delta * gamma) == pytest.approx(1.0)
        assert lp.a == pytest.approx(min(delta * gamma, 2 * theta))


class TestDrift:
    def test_zero_time(self, lj, fp, ms, lj_lyap):
        init = [SystemState.at([3.0 * i, 0.0], np.zeros(len(ms))) for i in range(1, 4)]
        est = estimate_drift(init, SimParams(fp, lj), ms, lj_lyap, 0.0, 100, 0)
        assert (est.c0, est.c1) == (1.0, 0.0)

    def test_contraction(self, lj, fp, ms, lj_lyap):
        v = np.geomspace(2.2, 220, 6) * lj_lyap.C2 / lj_lyap.a
        init = [SystemState.at([math.sqrt(x), 0.0], np.zeros(len(ms))) for x in v]
        est = estimate_drift(init, SimParams(fp, lj), ms, lj_lyap, 1.0, 200, 5)
        assert est.c0_upper95 < 1.0
        assert est.envelope_violations == 0

    def test_needs_two_fit_points(self, lj, fp, ms, lj_lyap):
        init = [SystemState.at([1.0, 0.0], np.zeros(len(ms)))] * 3
        with pytest.raises(ValueError, match="at least two"):
            estimate_drift(init, SimParams(fp, lj), ms, lj_lyap, 0.1, 100, 0)


class TestHookean:
    def test_quiet_fluid_exact_rate(self, fp):
        quiet = ModeSet([(1, 0), (0, 1)], [0.0, 0.0])
        rep = hookean_decay_test(1.5, quiet, fp, 2.0, 8, 0)
        assert rep.empirical_rate == pytest.approx(-3.0, abs=1e-8)
        assert rep.all_envelope_ok

    def test_stiff_spring_collapses(self, ms, fp):
        gamma = 10 * fp.lam * math.sqrt(fp.beta) * math.sqrt(3.0)
        rep = hookean_decay_test(gamma, ms, fp, 4.0, 50, 1)
        assert rep.empirical_rate < rep.lln_threshold
        assert rep.all_envelope_ok
        assert np.max(rep.final_ratio) < 1e-6

    def test_gamma_positive(self, ms, fp):
        with pytest.raises(ValueError):
            hookean_decay_test(0.0, ms, fp, 1.0, 4, 0)


class TestEscape:
    def test_quiet_fluid_escapes(self, lj, fp, lj_cert):
        quiet = ModeSet([(1, 0), (0, 1)], [0.0, 0.0])
        st_ = escape_time_stats(lj, quiet, fp, 0.5, 0.0, 1.0, 50, 0, horizon=1.0)
        assert st_.p_escape_unit_time == 1.0
        assert st_.max_escape_time <= 1.0

    def test_eps_above_eps0(self, lj, ms, fp, lj_cert):
        with pytest.raises(ValueError, match="eps0"):
            escape_time_stats(lj, ms, fp, 2 * lj_cert.eps0, 1.0, 2.0, 10, 0)

    def test_hookean_not_certified(self, ms, fp):
        with pytest.raises(ValueError, match="origin"):
            escape_time_stats(hookean(1.0), ms, fp, 0.1, 1.0, 2.0, 10, 0)

    def test_bad_set_radius(self, lj, ms, fp, lj_lyap, lj_cert):
        eps, st_ = bad_set_radius(lj, ms, fp, lj_lyap, 200, 0, certificate=lj_cert, horizon=1.0)
        assert eps == lj_cert.eps0
        assert st_.ci_low > 0

    @pytest.mark.parametrize("k,n", [(0, 10), (10, 10), (3, 10), (500, 1000)])
    def test_wilson_matches_scipy(self, k, n):
        ci = stats.binomtest(k, n).proportion_ci(method="wilson")
        assert wilson_interval(k, n) == pytest.approx((ci.low, ci.high), abs=1e-12)


class TestHormander:
    @pytest.mark.parametrize("r", [[0.0, 0.0], [4 * math.pi, 0.0], [4 * math.pi, -8 * math.pi]])
    def test_lattice_points_lose_connector_directions(self, ms, fp, r):
        # lam k.r in pi Z for every mode: all Stokes columns vanish
        assert hormander_rank_check(ms, fp, None, r) == (len(ms), False)

    def test_generic_point_full_rank(self, ms, fp):
        assert hormander_rank_check(ms, fp, None, [1.3, 0.4]) == (5, True)

    def test_monotone_in_modes(self, fp, gen):
        big = build_mode_set(3, lambda k: 1.0)
        for _ in range(20):
            r = gen.uniform(-3, 3, 2)
            ranks = [hormander_rank_check(ModeSet(big.modes[:j], big.sigmas[:j]), fp, None, r)[0] for j in range(1, len(big) + 1)]
            assert all(b >= a for a, b in zip(ranks, ranks[1:]))

    def test_parallel_modes_deficient(self, fp):
        par = ModeSet([(1, 0), (2, 0)], [1.0, 1.0])
        rank, full = hormander_rank_check(par, fp, None, [0.4, 0.3])
        assert rank == 3 and not full

    def test_matrix_shape(self, ms, fp):
        assert hormander_matrix(ms, fp, [0.3, 0.1]).shape == (5, 6)


class TestErgodic:
    def test_same_seed_same_start(self, lj, fp, ms):
        s = SystemState.at([1.0, 0.0], np.zeros(len(ms)))
        rep = ergodic_convergence(s, s, SimParams(fp, lj), ms, [0.5, 1.0], 200, 3, rng_b=3)
        assert rep.distances == [0.0, 0.0]

    def test_symmetric(self, lj, fp, ms):
        a = SystemState.at([0.6, 0.0], np.zeros(len(ms)))
        b = SystemState.at([2.0, 0.0], np.zeros(len(ms)))
        p = SimParams(fp, lj)
        d1 = ergodic_convergence(a, b, p, ms, [0.5], 200, 3, rng_b=4).distances
        d2 = ergodic_convergence(b, a, p, ms, [0.5], 200, 4, rng_b=3).distances
        assert d1 == d2

    def test_ks_distance(self, gen):
        a, b = gen.normal(size=300), gen.normal(0.5, size=400)
        assert ks_distance(a, b) == pytest.approx(stats.ks_2samp(a, b).statistic)
        assert ks_distance(a, a) == 0.0


class TestTube:
    def test_zero_duration(self, ms, fp):
        assert tube_occupancy(ms, fp, zero_reference(len(ms), 0.0), 0.1, 10, 0) == 1.0

    def test_infinite_tube(self, ms, fp):
        assert tube_occupancy(ms, fp, zero_reference(len(ms), 1.0), math.inf, 10, 0) == 1.0

    def test_zero_tube_rejected(self, ms, fp):
        with pytest.raises(ValueError):
            tube_occupancy(ms, fp, zero_reference(len(ms), 1.0), 0.0, 10, 0)

    def test_positive_at_two_std(self, ms, fp, lj):
        plan = plan_path([1.5, 0.0], [1.5 - 1 / math.sqrt(2), 1 / math.sqrt(2)], 0.5, 2.0)
        ref = synthesize_control(plan, lj, ms, fp)
        eps = 2.0 * math.sqrt(stationary_variance(ms, fp).sum())
        assert tube_occupancy(ms, fp, ref, eps, 10_000, 0) > 0

    @pytest.mark.xfail(reason="small-ball probability at half the stationary spread is below 1e-3", strict=False)
    def test_half_std_tube_hits(self, ms, fp):
        eps = 0.5 * math.sqrt(stationary_variance(ms, fp).sum())
        hits = tube_occupancy(ms, fp, zero_reference(len(ms), 1.0), eps, 10_000, 0) * 10_000
        assert hits >= 10

    def test_shrinking_tube_monotone(self, ms, fp):
        ref = zero_reference(len(ms), 1.0)
        occ = [tube_occupancy(ms, fp, ref, e, 2000, 7) for e in (4.0, 3.0, 2.0)]
        assert occ[0] >= occ[1] >= occ[2]


class TestOUStatistics:
    def test_within_three_se(self, ms, fp):
        assert ou_statistics(ms, fp, 10_000, 0).within(3.0)

    def test_detects_wrong_rate(self, ms, fp):
        rep = ou_statistics(ms, fp, 10_000, 0)
        rep.autocorr_expected = np.exp(-2 * np.outer(rep.lags, fp.lam**2 * fp.nu * ms.knorm**2))
        assert not rep.within(3.0)
