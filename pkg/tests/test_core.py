import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from hawkes_lab.core import (
    HawkesParams,
    IntensityState,
    MarkedEvent,
    ModelSpec,
    Realization,
    compensator_linear,
    compensator_nonlinear,
    event_left_right_limits,
    identifiability_check,
    intensity_at,
    intensity_path,
    link_constants,
    mark_link_eval,
    restart_time,
    stationarity_check,
    time_change,
)
from hawkes_lab.errors import (
    DataError,
    InvalidNormalization,
    InvalidParams,
    InvalidSpec,
    MissingMark,
    NonLinearSpec,
    NonPositiveMark,
    PerReceiverRequired,
)

from _oracles import brute_intensity_star, quadrature_compensator

LIN = ModelSpec()
NONLIN = ModelSpec(linearity="nonlinear")
BASE = HawkesParams(m=[1.0], a=[[0.6]], b=[2.0])


def one_d(times, horizon, marks=None):
    return Realization(times, [0] * len(times), horizon, 1, marks)


def random_instance(rng, d, n_max, nonlinear, marked=False):
    n = int(rng.integers(0, n_max + 1))
    horizon = float(rng.uniform(1.0, 6.0))
    times = np.sort(rng.uniform(0.01, horizon, n))
    comps = rng.integers(0, d, n)
    m = rng.uniform(0.2, 2.0, d)
    if nonlinear:
        a = rng.uniform(-3.0, 1.5, (d, d))
        b = rng.uniform(0.3, 3.0, d)
    else:
        a = rng.uniform(0.0, 1.5, (d, d))
        b = rng.uniform(0.3, 3.0, (d, d))
    marks = rng.exponential(1.0, n) if marked else None
    return times, comps, marks, m, a, b, horizon


class TestMarkLink:
    def test_zero_gamma_is_identity(self):
        assert mark_link_eval("exp", 0.0, 3.7) == 1.0
        assert mark_link_eval("power", 0.0, 3.7) == 1.0
        assert mark_link_eval("normexp", 0.0, 3.7, psi=2.0) == 1.0
        assert mark_link_eval("normpower", 0.0, 3.7, psi=2.0) == pytest.approx(1.0, abs=1e-15)

    def test_normexp_at_zero_mark(self):
        assert mark_link_eval("normexp", 0.5, 0.0, psi=1.0) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("link,gamma,psi", [("normexp", 0.5, 1.0), ("normexp", -0.7, 2.0),
                                                ("normpower", 0.5, 1.0), ("normpower", 1.3, 0.4)])
    def test_normalized_mean_is_one(self, link, gamma, psi):
        rng = np.random.default_rng(3)
        kap = rng.exponential(1.0 / psi, 400_000)
        vals = mark_link_eval(link, gamma, kap, psi=psi)
        se = vals.std() / math.sqrt(kap.size)
        assert abs(vals.mean() - 1.0) < 3 * se

    def test_normalized_mean_by_quadrature(self):
        from scipy.integrate import quad
        for link, g, psi in [("normexp", 0.5, 1.0), ("normpower", 0.5, 2.0)]:
            val, _ = quad(lambda x: mark_link_eval(link, g, x, psi=psi) * psi * math.exp(-psi * x),
                          0, 200.0 / psi, limit=200)
            assert val == pytest.approx(1.0, abs=1e-9)

    def test_power_rejects_nonpositive_mark(self):
        with pytest.raises(NonPositiveMark):
            mark_link_eval("power", 0.5, 0.0)

    def test_normexp_needs_gamma_below_psi(self):
        with pytest.raises(InvalidNormalization):
            mark_link_eval("normexp", 1.0, 0.5, psi=1.0)

    def test_constant_derivatives_match_fd(self):
        for link in ("normexp", "normpower"):
            g, psi, h = 0.3, 1.7, 1e-6
            c, dg, dp = link_constants(link, np.array([g]), psi)
            cg = (link_constants(link, np.array([g + h]), psi)[0]
                  - link_constants(link, np.array([g - h]), psi)[0]) / (2 * h)
            cp = (link_constants(link, np.array([g]), psi + h)[0]
                  - link_constants(link, np.array([g]), psi - h)[0]) / (2 * h)
            assert_allclose(dg, cg, rtol=1e-7)
            assert_allclose(dp, cp, rtol=1e-7)


class TestTypes:
    def test_nonlinear_needs_per_receiver(self):
        with pytest.raises(PerReceiverRequired):
            ModelSpec(linearity="nonlinear", b_structure="full")

    def test_poisson_cannot_be_marked(self):
        with pytest.raises(InvalidSpec):
            ModelSpec(baseline_only=True, link="exp")

    def test_params_positivity(self):
        with pytest.raises(InvalidParams):
            HawkesParams(m=[0.0], a=[[0.1]], b=[1.0])
        with pytest.raises(InvalidParams):
            HawkesParams(m=[1.0], a=[[0.1]], b=[-1.0])

    def test_linear_rejects_negative_a(self):
        p = HawkesParams(m=[1.0], a=[[-0.1]], b=[1.0])
        with pytest.raises(InvalidParams):
            p.validate_for(LIN)
        p.validate_for(NONLIN)

    def test_realization_rejects_ties_and_range(self):
        with pytest.raises(DataError):
            one_d([1.0, 1.0], 2.0)
        with pytest.raises(DataError):
            one_d([0.0, 1.0], 2.0)
        with pytest.raises(DataError):
            one_d([1.0, 3.0], 2.0)
        with pytest.raises(DataError):
            Realization([1.0], [1], 2.0, dim=1)

    def test_event_at_horizon_allowed(self):
        assert one_d([1.0, 2.0], 2.0).n_events == 2

    def test_jitter_separates_ties(self):
        r = Realization.from_unsorted([2.0, 1.0, 1.0], [0, 0, 0], 3.0, jitter=True)
        assert np.all(np.diff(r.times) > 0)
        assert r.times[0] == 1.0
        with pytest.raises(DataError):
            Realization.from_unsorted([2.0, 1.0, 1.0], [0, 0, 0], 3.0)

    def test_from_events_roundtrip(self):
        ev = [MarkedEvent(0.5, 0, 1.2), MarkedEvent(0.2, 1, 0.3)]
        r = Realization.from_events(ev, 1.0, dim=2)
        assert r.events() == [MarkedEvent(0.2, 1, 0.3), MarkedEvent(0.5, 0, 1.2)]
        with pytest.raises(MissingMark):
            Realization.from_events([MarkedEvent(0.5, 0, 1.2), MarkedEvent(0.7, 0)], 1.0)

    def test_immutable(self):
        r = one_d([1.0], 2.0)
        with pytest.raises(ValueError):
            r.times[0] = 0.5
        with pytest.raises(ValueError):
            BASE.m[0] = 2.0


class TestIntensity:
    def test_single_event(self):
        star, lam = intensity_at(BASE, LIN, one_d([1.0], 5.0), 1.5)
        assert star[0] == pytest.approx(1 + 0.6 * math.exp(-1), abs=1e-14)
        assert star[0] == pytest.approx(1.22073, abs=5e-6)
        assert lam[0] == star[0]

    def test_left_limit_at_event(self):
        star, _ = intensity_at(BASE, LIN, one_d([1.0], 5.0), 1.0)
        assert star[0] == 1.0

    def test_poisson_is_flat(self):
        p = HawkesParams.poisson([0.7, 1.3])
        r = Realization([0.3, 0.8, 1.5], [0, 1, 0], 2.0, 2)
        star, _ = intensity_path(p, ModelSpec.poisson(2), r, [0.1, 0.9, 2.0])
        assert_allclose(star, [[0.7, 1.3]] * 3)

    def test_truncation(self):
        p = HawkesParams(m=[1.0], a=[[-2.0]], b=[2.0])
        star, lam = intensity_at(p, NONLIN, one_d([1.0], 5.0), 1.1)
        assert star[0] == pytest.approx(1 - 2 * math.exp(-0.2), abs=1e-14)
        assert star[0] == pytest.approx(-0.63746, abs=5e-6)
        assert lam[0] == 0.0

    def test_left_right_limits(self):
        left, right = event_left_right_limits(BASE, LIN, one_d([1.0, 2.0], 2.0))
        assert left[0, 0] == 1.0
        assert left[1, 0] == pytest.approx(1.0812011699, abs=1e-9)
        assert right[1, 0] == pytest.approx(1.6812011699, abs=1e-9)

    def test_marked_jump(self):
        spec = ModelSpec(link="exp")
        p = BASE.replace(gamma=[[0.5]])
        _, right = event_left_right_limits(p, spec, one_d([1.0], 2.0, marks=[2.0]))
        assert right[0, 0] == pytest.approx(1 + 0.6 * math.e, abs=1e-14)

    def test_marked_needs_marks(self):
        with pytest.raises(MissingMark):
            event_left_right_limits(BASE.replace(gamma=[[0.5]]), ModelSpec(link="exp"),
                                    one_d([1.0], 2.0))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            t, c, mk, m, a, b, T = random_instance(rng, 2, 8, nonlinear=False, marked=True)
            g = rng.uniform(-0.5, 0.5, (2, 2))
            p = HawkesParams(m=m, a=a, b=b, gamma=g)
            r = Realization(t, c, T, 2, mk)
            q = np.sort(rng.uniform(0, T, 7))
            star, _ = intensity_path(p, ModelSpec(dim=2, link="exp", b_structure="full"), r, q)
            for k, s in enumerate(q):
                ref = brute_intensity_star(s, t, c, mk, m, a, b, "exp", g)
                assert_allclose(star[k], ref, rtol=1e-12, atol=1e-12)

    def test_state_semigroup(self):
        st_ = IntensityState(0.0, [[0.5, -0.2], [0.1, 0.9]], [1.0, 1.0], [[1.0, 2.0], [0.5, 3.0]])
        one = st_.advance(0.3).advance(0.45)
        two = st_.advance(0.75)
        assert_allclose(one.S, two.S, rtol=1e-12, atol=1e-15)
        assert one.intensity_star() == pytest.approx(two.intensity_star(), abs=1e-12)

    def test_state_agrees_with_kernel(self):
        p = HawkesParams(m=[1.0, 0.5], a=[[0.3, 0.2], [0.4, 0.1]], b=[[1.0, 2.0], [0.5, 3.0]])
        r = Realization([0.4, 1.1], [1, 0], 3.0, 2)
        s = IntensityState.empty(p).advance(0.4).jump(1, p.a[:, 1]).advance(0.7).jump(0, p.a[:, 0])
        star, _ = intensity_at(p, ModelSpec(dim=2, b_structure="full"), r, 2.5)
        assert_allclose(s.intensity_star(2.5), star, rtol=1e-13)


class TestCompensator:
    def test_poisson(self):
        p = HawkesParams.poisson([2.0])
        per, tot = compensator_linear(p, ModelSpec.poisson(), one_d([0.5, 1.0, 2.5], 3.0))
        assert tot == pytest.approx(6.0, abs=1e-14)

    def test_single_event(self):
        _, tot = compensator_linear(BASE, LIN, one_d([1.0], 2.0))
        assert tot == pytest.approx(2 + 0.3 * (1 - math.exp(-2)), abs=1e-14)
        assert tot == pytest.approx(2.25940, abs=5e-6)

    def test_nonlinear_single_event(self):
        # lambda*(1+) = -1, restart at 1 + log(2)/2; integral over [0, 2]
        p = HawkesParams(m=[1.0], a=[[-2.0]], b=[2.0])
        _, tot = compensator_nonlinear(p, NONLIN, one_d([1.0], 2.0))
        t_star = 1 + 0.5 * math.log(2)
        jump = -2.0
        expected = 1 + (2 - t_star) + jump / 2 * (math.exp(-2 * (t_star - 1)) - math.exp(-2))
        assert tot == pytest.approx(expected, abs=1e-14)
        assert tot == pytest.approx(1.2887616929566, abs=1e-10)

    def test_linear_rejects_nonlinear_spec(self):
        with pytest.raises(NonLinearSpec):
            compensator_linear(BASE, NONLIN, one_d([1.0], 2.0))

    def test_nonlinear_equals_linear_without_truncation(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            t, c, _, m, a, b, T = random_instance(rng, 2, 8, nonlinear=True)
            a = np.abs(a)
            p = HawkesParams(m=m, a=a, b=b)
            r = Realization(t, c, T, 2)
            lin = compensator_linear(p, ModelSpec(dim=2), r)[0]
            non = compensator_nonlinear(p, ModelSpec(dim=2, linearity="nonlinear"), r)[0]
            assert_allclose(lin, non, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("nonlinear", [False, True])
    def test_matches_quadrature(self, nonlinear):
        rng = np.random.default_rng(17 + nonlinear)
        for _ in range(40):
            d = int(rng.integers(1, 3))
            t, c, _, m, a, b, T = random_instance(rng, d, 6, nonlinear)
            p = HawkesParams(m=m, a=a, b=b)
            r = Realization(t, c, T, d)
            if nonlinear:
                got = compensator_nonlinear(p, ModelSpec(dim=d, linearity="nonlinear"), r)[0]
                bmat = np.repeat(b[:, None], d, axis=1)
            else:
                got = compensator_linear(p, ModelSpec(dim=d, b_structure="full"), r)[0]
                bmat = b
            ref = quadrature_compensator(T, t, c, None, m, a, bmat, nonlinear)
            assert_allclose(got, ref, rtol=0, atol=1e-8)

    def test_monotone_in_horizon(self):
        p = HawkesParams(m=[1.0], a=[[-2.0]], b=[2.0])
        r = one_d([0.5, 1.0, 1.2], 4.0)
        vals = [compensator_nonlinear(p, NONLIN, r, T)[1] for T in np.linspace(0, 4, 41)]
        assert vals[0] == 0.0
        assert np.all(np.diff(vals) >= 0)


class TestRestartTime:
    def test_nonnegative(self):
        assert restart_time(0.5, 1.0, 2.0, 3.0, 5.0) == 3.0

    def test_solves_zero(self):
        assert restart_time(-1.0, 1.0, 2.0, 0.0) == pytest.approx(0.5 * math.log(2), abs=1e-15)

    def test_truncated_at_next_event(self):
        assert restart_time(-1.0, 1.0, 2.0, 0.0, 0.1) == 0.1


class TestTimeChange:
    def test_poisson_rescaling(self):
        p = HawkesParams.poisson([1.7])
        r = one_d([0.2, 0.9, 1.4], 2.0)
        tc = time_change(p, ModelSpec.poisson(), r)
        assert_allclose(tc.per_component[0], 1.7 * r.times, rtol=1e-14)
        assert_allclose(tc.merged_times, 1.7 * r.times, rtol=1e-14)

    def test_increasing_and_marks_in_unit_interval(self):
        spec = ModelSpec(dim=2, link="normexp")
        p = HawkesParams(m=[1, 1], a=[[0.3, 0.1], [0.2, 0.3]], b=[1.0, 1.5],
                         gamma=[[0.2, 0.1], [0.0, 0.3]], psi=1.0)
        r = Realization([0.1, 0.4, 0.45, 1.2], [0, 1, 1, 0], 2.0, 2, [0.3, 1.5, 0.1, 2.0])
        tc = time_change(p, spec, r)
        assert np.all(np.diff(tc.merged_times) > 0)
        for arr in tc.per_component:
            assert np.all(np.diff(arr) > 0)
        assert np.all((tc.merged_marks_uniform >= 0) & (tc.merged_marks_uniform <= 1))

    def test_per_component_matches_quadrature(self):
        p = HawkesParams(m=[1.0, 0.5], a=[[0.3, 0.2], [0.4, 0.1]], b=[1.0, 2.0])
        r = Realization([0.4, 1.1, 1.9], [1, 0, 1], 3.0, 2)
        tc = time_change(p, ModelSpec(dim=2), r)
        bm = p.b_matrix()
        for i, arr in enumerate(tc.per_component):
            ev = r.times[r.components == i]
            ref = [quadrature_compensator(t, r.times, r.components, None, p.m, p.a, bm, False)[i]
                   for t in ev]
            assert_allclose(arr, ref, atol=1e-9)


class TestChecks:
    def test_reference_radius(self):
        res = stationarity_check(BASE, LIN)
        assert res["spectral_radius"] == pytest.approx(0.3, abs=1e-10)
        assert res["stationary"]

    def test_zero_radius(self):
        assert stationarity_check(HawkesParams.poisson([1.0]), LIN)["spectral_radius"] == 0.0

    def test_two_dim_radius(self):
        p = HawkesParams(m=[1, 1], a=[[0.4, 0.2], [0.2, 0.6]], b=[1.0, 1.0])
        res = stationarity_check(p, ModelSpec(dim=2))
        assert res["spectral_radius"] == pytest.approx(0.5 + math.sqrt(0.05), abs=1e-9)
        assert res["stationary"]

    def test_uses_absolute_values(self):
        p = HawkesParams(m=[1.0], a=[[-3.0]], b=[2.0])
        res = stationarity_check(p, NONLIN)
        assert res["spectral_radius"] == pytest.approx(1.5)
        assert not res["stationary"]

    def test_normalized_flag(self):
        spec = ModelSpec(link="exp")
        assert not stationarity_check(BASE.replace(gamma=[[0.5]], psi=1.0), spec)["normalized"]
        assert stationarity_check(BASE.replace(gamma=[[0.0]], psi=1.0), spec)["normalized"]
        assert stationarity_check(BASE.replace(gamma=[[0.5]], psi=1.0),
                                  ModelSpec(link="normexp"))["normalized"]

    def test_identifiability(self):
        spec = ModelSpec(dim=2, link="exp")
        r = Realization([0.1, 0.2, 0.3], [0, 0, 1], 1.0, 2, [0.5, 0.5, 1.0])
        res = identifiability_check(r, spec)
        assert not res["ok"]
        assert not res["per_pair"][:, 0].any()
        r2 = Realization([0.1, 0.2, 0.3, 0.4], [0, 0, 1, 1], 1.0, 2, [0.5, 0.7, 1.0, 0.2])
        assert identifiability_check(r2, spec)["ok"]

    def test_identifiability_empty_component(self):
        r = Realization([0.1], [0], 1.0, 2)
        res = identifiability_check(r, ModelSpec(dim=2))
        assert not res["ok"] and res["per_pair"][:, 0].all()


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gamma_zero_nesting(self, seed):
        rng = np.random.default_rng(seed)
        t, c, mk, m, a, b, T = random_instance(rng, 2, 8, nonlinear=False, marked=True)
        r = Realization(t, c, T, 2, mk)
        p = HawkesParams(m=m, a=a, b=b, gamma=np.zeros((2, 2)), psi=1.0)
        q = np.linspace(0, T, 9)
        for link in ("exp", "power", "normexp", "normpower"):
            marked = intensity_path(p, ModelSpec(dim=2, link=link, b_structure="full"), r, q)[0]
            plain = intensity_path(p, ModelSpec(dim=2, b_structure="full"), r.without_marks(), q)[0]
            assert_allclose(marked, plain, rtol=0, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_zero_a_is_poisson(self, seed):
        rng = np.random.default_rng(seed)
        t, c, _, m, _, b, T = random_instance(rng, 2, 8, nonlinear=False)
        r = Realization(t, c, T, 2)
        p = HawkesParams(m=m, a=np.zeros((2, 2)), b=b)
        star, _ = intensity_path(p, ModelSpec(dim=2, b_structure="full"), r, np.linspace(0, T, 5))
        assert_allclose(star, np.tile(m, (5, 1)), rtol=0, atol=1e-12)
        assert compensator_linear(p, ModelSpec(dim=2, b_structure="full"), r)[1] == \
            pytest.approx(m.sum() * T, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_semigroup(self, d1, d2):
        st_ = IntensityState(0.0, [[1.0, -0.5], [0.25, 2.0]], [1.0, 1.0], [[0.7, 1.3], [2.1, 0.4]])
        assert_allclose(st_.advance(d1).advance(d2).S, st_.advance(d1 + d2).S,
                        rtol=1e-12, atol=1e-15)
