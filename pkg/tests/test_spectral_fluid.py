import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beadspring.spectral_fluid import (
    FluidParams,
    FluidState,
    ModeIndex,
    ModeSet,
    build_mode_set,
    connector_forcing,
    default_mode_set,
    eval_field,
    eval_velocity,
    forcing_ratio,
    ou_step_exact,
    ou_transition,
    sigma_norm,
    stationary_sample,
    stationary_variance,
)

unit = FluidParams(lam=1.0, nu=1.0, beta=1.0)


class TestModeIndex:
    def test_perpendicular(self):
        m = ModeIndex((2, -3))
        assert m.kperp == (3, 2)
        assert np.dot(m.k, m.kperp) == 0
        assert math.isclose(np.hypot(*m.kperp), m.norm)

    def test_zero_mode_rejected(self):
        with pytest.raises(ValueError):
            ModeIndex((0, 0))


class TestBuildModeSet:
    def test_unit_shell(self):
        ms = build_mode_set(1)
        assert [m.k for m in ms.modes] == [(1, 0), (0, 1)]
        np.testing.assert_array_equal(ms.sigmas, [1.0, 1.0])
        assert ms.pairwise_independent_count == 2

    def test_shape_on_unit_shell(self):
        ms = build_mode_set(1, lambda kn: kn**-2)
        np.testing.assert_allclose(ms.sigmas, [1.0, 1.0])

    def test_k_max_two(self):
        ms = build_mode_set(2)
        assert {m.k for m in ms.modes} == {(1, 0), (0, 1), (1, 1), (1, -1), (2, 0), (0, 2)}
        assert ms.pairwise_independent_count == 4

    def test_one_representative_per_sign_pair(self):
        ms = build_mode_set(3)
        keys = {m.k for m in ms.modes}
        assert not any((-kx, -ky) in keys for kx, ky in keys)

    def test_exclusion_to_empty(self):
        with pytest.raises(ValueError, match="empty mode set"):
            build_mode_set(1, exclusions=[(1, 0), (0, -1)])

    def test_duplicate_pair_rejected(self):
        with pytest.raises(ValueError):
            ModeSet([(1, 0), (-1, 0)], [1.0, 1.0])

    def test_text_round_trip(self):
        ms = build_mode_set(2, lambda kn: 1.0 / kn)
        assert ModeSet.from_text(ms.to_text()) == ms


class TestSigmaNorm:
    def test_single(self):
        assert sigma_norm(ModeSet([(1, 0)], [1.0]), 0.0) == 1.0

    def test_unit_pair(self):
        assert math.isclose(sigma_norm(build_mode_set(1), 1.0), math.sqrt(2))

    def test_k_max_two(self):
        assert math.isclose(sigma_norm(build_mode_set(2), 1.0), math.sqrt(3.5))


class TestStationary:
    def test_zero_sigma(self, gen):
        ms = ModeSet([(1, 0), (0, 1)], [0.0, 0.0])
        assert np.all(stationary_sample(ms, unit, gen).z == 0)

    @pytest.mark.parametrize("k, expected", [((1, 0), 1.0), ((2, 0), 0.25)])
    def test_variance(self, k, expected, gen):
        ms = ModeSet([k], [1.0])
        np.testing.assert_allclose(stationary_variance(ms, unit), [expected])
        z = np.array([stationary_sample(ms, unit, gen).z[0] for _ in range(20000)])
        se = expected * math.sqrt(2 / (len(z) - 1))
        assert abs(z.var(ddof=1) - expected) < 4 * se

    def test_cosine_on_request(self, ms, fp, gen):
        fs = stationary_sample(ms, fp, gen, with_cosine=True)
        assert fs.y is not None and fs.y.shape == fs.z.shape


class TestOUStep:
    def test_zero_dt(self, ms, fp, gen):
        fs = FluidState(np.ones(3))
        assert ou_step_exact(fs, fp, ms, 0.0, gen) is fs

    def test_negative_dt(self, ms, fp, gen):
        with pytest.raises(ValueError):
            ou_step_exact(FluidState(np.ones(3)), fp, ms, -0.1, gen)

    def test_halving_without_noise(self, gen):
        ms = ModeSet([(1, 0)], [0.0])
        out = ou_step_exact(FluidState(np.array([3.0])), unit, ms, math.log(2), gen)
        assert math.isclose(out.z[0], 1.5, rel_tol=1e-15)

    def test_transition_variance_from_rest(self, ms, fp):
        dt = 0.3
        rs = np.random.default_rng(1)
        z = np.array([ou_step_exact(FluidState(np.zeros(3)), fp, ms, dt, rs).z for _ in range(10000)])
        theta = fp.lam**2 * fp.nu * ms.knorm**2
        expected = stationary_variance(ms, fp) * (1 - np.exp(-2 * theta * dt))
        se = expected * math.sqrt(2 / (len(z) - 1))
        assert np.all(np.abs(z.var(axis=0, ddof=1) - expected) < 3 * se)

    def test_semigroup(self, ms, fp):
        d1, s1 = ou_transition(ms, fp, 0.2)
        d2, s2 = ou_transition(ms, fp, 0.4)
        np.testing.assert_allclose(d1 * d1, d2, rtol=1e-12)
        np.testing.assert_allclose(d1**2 * s1**2 + s1**2, s2**2, rtol=1e-12)

    def test_stationarity_preserved(self, ms, fp):
        rs = np.random.default_rng(2)
        var = stationary_variance(ms, fp)
        z = np.sqrt(var) * rs.standard_normal((10000, 3))
        d, s = ou_transition(ms, fp, 0.7)
        z = d * z + s * rs.standard_normal(z.shape)
        se = var * math.sqrt(2 / (len(z) - 1))
        assert np.all(np.abs(z.var(axis=0, ddof=1) - var) < 4 * se)


class TestVelocity:
    def test_zero_amplitudes(self, ms, fp):
        np.testing.assert_array_equal(eval_velocity(ms, FluidState(np.zeros(3)), fp, [0.3, 0.4]), [0, 0])

    def test_single_mode(self):
        ms = ModeSet([(1, 0)], [1.0])
        u = eval_velocity(ms, FluidState(np.array([2.0])), unit, [math.pi / 2, 0.0])
        np.testing.assert_allclose(u, [0.0, 2.0], atol=1e-15)

    def test_term_by_term_oracle(self, ms, fp, gen):
        for _ in range(50):
            r = gen.uniform(-5, 5, 2)
            z = gen.standard_normal(3)
            oracle = [0.0, 0.0]
            for m, zk in zip(ms.modes, z):
                s = math.sin(fp.lam * (m.k[0] * r[0] + m.k[1] * r[1])) * zk / m.norm
                oracle[0] += s * m.kperp[0]
                oracle[1] += s * m.kperp[1]
            np.testing.assert_allclose(eval_velocity(ms, FluidState(z), fp, r), oracle, atol=1e-12)

    def test_center_of_mass_needs_cosine(self, ms, fp):
        with pytest.raises(ValueError, match="cosine modes required"):
            eval_velocity(ms, FluidState(np.ones(3)), fp, [1.0, 0.0], m=[0.0, 0.0])

    def test_center_of_mass_at_origin_reduces(self, ms, fp, gen):
        fs = FluidState(gen.standard_normal(3), gen.standard_normal(3))
        r = gen.uniform(-2, 2, 2)
        np.testing.assert_array_equal(eval_velocity(ms, fs, fp, r, m=[0.0, 0.0]), eval_velocity(ms, FluidState(fs.z), fp, r))

    @settings(max_examples=50, deadline=None)
    @given(
        st.lists(st.floats(-20, 20), min_size=2, max_size=2),
        st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    )
    def test_periodic(self, r, z):
        ms, fp = default_mode_set(), FluidParams()
        fs = FluidState(np.array(z))
        u = eval_velocity(ms, fs, fp, r)
        for shift in ([fp.L, 0.0], [0.0, fp.L]):
            np.testing.assert_allclose(eval_velocity(ms, fs, fp, np.add(r, shift)), u, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(-20, 20), min_size=2, max_size=2),
        st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    )
    def test_cauchy_schwarz_bound(self, r, z):
        ms, fp = default_mode_set(), FluidParams()
        u = connector_forcing(ms, fp, np.array(r), np.array(z))
        assert u @ u <= len(ms) * np.dot(z, z) * (1 + 1e-12) + 1e-300

    def test_unit_constant_bound_measured(self, ms, fp, gen):
        ratio = forcing_ratio(ms, fp, 20000, gen)
        assert 0 < ratio <= len(ms)


class TestField:
    def test_zero(self, ms, fp):
        fs = FluidState(np.zeros(3), np.zeros(3))
        np.testing.assert_array_equal(eval_field(ms, fs, fp, [1.0, 2.0]), [0, 0])

    def test_origin_is_cosine_part(self):
        ms = ModeSet([(1, 1)], [1.0])
        fs = FluidState(np.array([5.0]), np.array([2.0]))
        np.testing.assert_allclose(eval_field(ms, fs, unit, [0.0, 0.0]), 2.0 * np.array([-1, 1]) / math.sqrt(2))

    def test_requires_cosine(self, ms, fp):
        with pytest.raises(ValueError, match="cosine modes required"):
            eval_field(ms, FluidState(np.ones(3)), fp, [0.0, 0.0])

    def test_divergence_free(self, gen):
        ms = build_mode_set(3, lambda kn: kn**-1)
        fp = FluidParams()
        fs = stationary_sample(ms, fp, gen, with_cosine=True)
        h = 1e-5
        x = gen.uniform(-10, 10, (100, 2))
        ex, ey = np.array([h, 0.0]), np.array([0.0, h])
        div = (eval_field(ms, fs, fp, x + ex)[:, 0] - eval_field(ms, fs, fp, x - ex)[:, 0]) / (2 * h) + (
            eval_field(ms, fs, fp, x + ey)[:, 1] - eval_field(ms, fs, fp, x - ey)[:, 1]
        ) / (2 * h)
        assert np.max(np.abs(div)) < 1e-6
