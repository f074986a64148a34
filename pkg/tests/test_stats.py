import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from owadd.stats import (
    DegenerateFitWarning,
    KdeModel,
    kde_fit,
    kde_score,
    kolmogorov_sf,
    ks_two_sample,
    one_sided_t_test,
    student_t_cdf,
    subsample,
)

from oracles import brute_force_ks_statistic, ks_reference, t_cdf_by_quadrature, welch_less_pvalue

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)
samples = st.lists(finite, min_size=3, max_size=40).filter(lambda xs: np.ptp(xs) > 1e-3)


class TestStudentT:
    def test_zero_is_half(self):
        for dof in (0.5, 1, 3.7, 100):
            assert student_t_cdf(0.0, dof) == 0.5

    def test_known_value(self):
        # quadrature of the density gives 0.8295534338...
        assert student_t_cdf(1.0, 10) == pytest.approx(0.8295534338489704, abs=1e-10)

    @pytest.mark.parametrize("dof", [1, 2.5, 5, 10, 30, 100, 1000])
    @pytest.mark.parametrize("t", [-50, -7.3, -1.0, -0.01, 0.3, 2.0, 12.0, 50])
    def test_matches_quadrature(self, t, dof):
        assert abs(student_t_cdf(t, dof) - t_cdf_by_quadrature(t, dof)) <= 1e-8

    @given(st.floats(-50, 50), st.floats(0.5, 1000))
    def test_symmetry(self, t, dof):
        assert student_t_cdf(-t, dof) == pytest.approx(1 - student_t_cdf(t, dof), abs=1e-12)

    def test_rejects_bad_dof(self):
        with pytest.raises(ValueError):
            student_t_cdf(1.0, 0)


class TestWelch:
    def test_identical_samples(self):
        x = [1.0, 2.5, 3.0, 7.0]
        res = one_sided_t_test(x, x)
        assert res.t_statistic == 0
        assert res.p_value == 0.5

    def test_hand_example(self):
        res = one_sided_t_test([1, 2, 3, 4, 5], [2, 3, 4, 5, 6])
        assert res.t_statistic == pytest.approx(-1.0)
        assert res.degrees_of_freedom == pytest.approx(8.0)
        assert res.p_value == pytest.approx(0.173296753543667, abs=1e-9)

    def test_large_shift(self):
        rng = np.random.default_rng(0)
        ref, cur = rng.normal(0, 1, 30), rng.normal(5, 1, 30)
        res = one_sided_t_test(ref, cur)
        assert res.p_value < 1e-6
        assert res.p_value == pytest.approx(welch_less_pvalue(ref, cur), rel=1e-6)

    def test_constant_equal_samples(self):
        assert one_sided_t_test([2, 2, 2], [2, 2]).p_value == 0.5

    def test_constant_distinct_samples(self):
        assert one_sided_t_test([1, 1, 1], [2, 2]).p_value == 0.0
        assert one_sided_t_test([3, 3, 3], [2, 2]).p_value == 1.0

    def test_needs_two_each(self):
        with pytest.raises(ValueError):
            one_sided_t_test([1.0], [1.0, 2.0])

    @settings(max_examples=60)
    @given(samples, samples)
    def test_complementary_directions(self, a, b):
        total = one_sided_t_test(a, b).p_value + one_sided_t_test(b, a).p_value
        assert total == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=60)
    @given(samples, samples, st.floats(1e-3, 1e3))
    def test_scale_invariance(self, a, b, c):
        base = one_sided_t_test(a, b)
        scaled = one_sided_t_test(np.multiply(a, c), np.multiply(b, c))
        assert scaled.t_statistic == pytest.approx(base.t_statistic, rel=1e-9, abs=1e-10)
        assert scaled.p_value == pytest.approx(base.p_value, abs=1e-10)


class TestSubsample:
    def test_full_draw_is_permutation(self):
        values = np.arange(10.0)
        out = subsample(values, 10, np.random.default_rng(3))
        assert sorted(out) == list(values)

    def test_draw_from_buffer(self):
        buf = np.random.default_rng(1).exponential(size=1000)
        out = subsample(buf, 30, np.random.default_rng(2))
        assert len(out) == 30
        assert np.isin(out, buf).all()
        assert len(set(out.tolist())) == 30

    def test_deterministic(self):
        buf = np.arange(100.0)
        a = subsample(buf, 30, np.random.default_rng(9))
        b = subsample(buf, 30, np.random.default_rng(9))
        assert np.array_equal(a, b)

    def test_too_many(self):
        with pytest.raises(ValueError):
            subsample([1.0, 2.0], 3, np.random.default_rng(0))


class TestKde:
    def test_single_point_floor(self):
        with pytest.warns(DegenerateFitWarning):
            model = kde_fit([5.0])
        assert model.bandwidth == 1e-6
        assert list(model.support_points) == [5.0]

    def test_constant_sample_floor(self):
        with pytest.warns(DegenerateFitWarning):
            assert kde_fit([2.0] * 10).bandwidth == 1e-6

    def test_scott_bandwidth(self):
        draws = np.random.default_rng(0).normal(size=1000)
        model = kde_fit(draws)
        assert model.bandwidth == pytest.approx(draws.std(ddof=1) * 1000 ** -0.2, rel=1e-12)
        assert model.bandwidth / draws.std(ddof=1) == pytest.approx(0.2512, abs=1e-4)

    def test_single_gaussian_at_mode(self):
        model = KdeModel(np.array([3.0]), 1.0)
        assert kde_score(model, [3.0])[0] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)

    def test_two_point_midpoint(self):
        model = KdeModel(np.array([0.0, 2.0]), 1.0)
        assert kde_score(model, [1.0])[0] == pytest.approx(0.24197072451914337, abs=1e-12)

    def test_normalized(self):
        model = kde_fit(np.random.default_rng(4).gamma(2.0, size=300))
        lo = model.support_points.min() - 10 * model.bandwidth
        hi = model.support_points.max() + 10 * model.bandwidth
        xs = np.linspace(lo, hi, 100001)
        assert np.trapezoid(kde_score(model, xs), xs) == pytest.approx(1.0, abs=1e-3)

    def test_blocked_scoring_matches(self):
        model = kde_fit(np.random.default_rng(5).normal(size=50))
        q = np.linspace(-4, 4, 999)
        assert np.allclose(kde_score(model, q, block=7), kde_score(model, q))

    @settings(max_examples=40)
    @given(st.lists(st.floats(-100, 100), min_size=2, max_size=30), st.randoms(use_true_random=False))
    def test_permutation_invariance(self, support, rnd):
        support = np.asarray(support)
        if np.ptp(support) < 1e-6:
            return
        query = np.linspace(support.min() - 1, support.max() + 1, 17)
        perm_s = support.copy()
        rnd.shuffle(perm_s)
        order = list(range(len(query)))
        rnd.shuffle(order)
        base = kde_score(KdeModel(support, 1.3), query)
        shuffled = kde_score(KdeModel(perm_s, 1.3), query[order])
        assert np.allclose(shuffled, base[order], rtol=1e-12, atol=1e-300)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            kde_fit([])

    def test_no_warning_on_normal_fit(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            kde_fit([1.0, 2.0, 3.0])


class TestKS:
    def test_identical(self):
        x = [0.1, 0.5, 0.9, 1.4]
        res = ks_two_sample(x, x)
        assert res.statistic == 0
        assert res.p_value == 1.0

    def test_disjoint(self):
        assert ks_two_sample([1, 2, 3], [4, 5, 6]).statistic == 1.0

    def test_shifted_normals(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(0, 1, 200), rng.normal(1, 1, 200)
        res = ks_two_sample(a, b)
        d_ref, p_ref = ks_reference(a, b)
        assert res.statistic == pytest.approx(d_ref)
        assert res.p_value < 0.005
        assert res.p_value == pytest.approx(p_ref, abs=1e-12)

    def test_statistic_matches_brute_force(self):
        rng = np.random.default_rng(7)
        a, b = rng.integers(0, 5, 40).astype(float), rng.integers(0, 6, 25).astype(float)
        assert ks_two_sample(a, b).statistic == pytest.approx(brute_force_ks_statistic(a, b))

    @pytest.mark.parametrize("x", [0.01, 0.1, 0.19, 0.2, 0.21, 0.5, 0.8, 1.2, 2.0, 4.0])
    def test_kolmogorov_tail(self, x):
        from scipy.stats import kstwobign

        assert kolmogorov_sf(x) == pytest.approx(kstwobign.sf(x), abs=1e-12)

    @settings(max_examples=40)
    @given(st.lists(st.integers(-40, 40), min_size=2, max_size=30), st.lists(st.integers(-40, 40), min_size=2, max_size=30))
    def test_monotone_transform_invariance(self, a, b):
        # integer grid keeps the transforms injective in floating point
        a, b = np.divide(a, 8.0), np.divide(b, 8.0)
        base = ks_two_sample(a, b)
        moved = ks_two_sample(np.exp(a), np.exp(b))
        cubed = ks_two_sample(np.power(a, 3) + 2, np.power(b, 3) + 2)
        assert moved.statistic == pytest.approx(base.statistic)
        assert cubed.statistic == pytest.approx(base.statistic)
