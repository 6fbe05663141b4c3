import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from equivtest.critical import EquivalenceSpec, coverage_level, critical_value, exact_power
from equivtest.distfn import norm_quantile
from equivtest.errors import DegenerateDataError, DomainError, SingularMatrixError
from equivtest.models import BernoulliModel, FunctionalG, GaussianMeanModel, NormalModel
from equivtest.procedures import (
    Method,
    asymptotic_power_bound,
    plugin_test,
    tost,
    ump_known_sigma,
    ump_linear_gaussian,
)


def with_moments(n, mean, sd, seed=0):
    """A sample of size n with exactly the given mean and unbiased sd."""
    z = np.random.default_rng(seed).normal(size=n)
    z = (z - z.mean()) / z.std(ddof=1)
    return mean + sd * z


def random_orthogonal_with_first_row(a, rng):
    k = a.size
    m = np.column_stack([a, rng.normal(size=(k, k - 1))])
    q, _ = np.linalg.qr(m)
    q[:, 0] *= np.sign(q[:, 0] @ a)
    return q.T


def random_cov(k, rng):
    b = rng.normal(size=(k, k))
    return b @ b.T + 0.1 * np.eye(k)


class TestUMPKnownSigma:
    def test_zero_mean_rejects(self):
        d = ump_known_sigma([0.0], 1.0, 0.05, 1.0)
        assert d.statistic == 0.0
        assert d.reject
        assert d.method is Method.UMP_KNOWN_SIGMA

    def test_example_accepts(self):
        x = with_moments(100, 0.5, 1.0)
        d = ump_known_sigma(x, 1.0, 0.05, 0.1)
        assert d.statistic == pytest.approx(5.0, rel=1e-12)
        assert d.critical_value == pytest.approx(0.10331847967255690133, rel=1e-12)
        assert not d.reject
        assert d.spec.delta == pytest.approx(1.0)

    def test_scales_margin_by_root_n(self):
        x = with_moments(25, 0.1, 2.0)
        d = ump_known_sigma(x, 2.0, 0.05, 0.4)
        assert d.critical_value == pytest.approx(critical_value(0.05, 2.0, 2.0), rel=1e-14)
        # P(|N(delta, sigma^2)| <= observed statistic)
        assert d.p_value == pytest.approx(coverage_level(0.5, 2.0, 2.0), rel=1e-12)

    def test_invalid(self):
        with pytest.raises(DomainError):
            ump_known_sigma([0.0], -1.0, 0.05, 1.0)
        with pytest.raises(DomainError):
            ump_known_sigma([], 1.0, 0.05, 1.0)
        with pytest.raises(DomainError):
            ump_known_sigma([0.0], 1.0, 0.05, 0.0)


class TestUMPLinearGaussian:
    def test_one_dimension_is_known_sigma_test(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            x, s, delta = rng.normal(), rng.uniform(0.3, 3), rng.uniform(0.1, 3)
            a = ump_linear_gaussian([x], [1.0], [[s * s]], 0.05, delta)
            b = ump_known_sigma([x], s, 0.05, delta)
            assert a.reject == b.reject
            assert a.statistic == pytest.approx(b.statistic, abs=1e-15)
            assert a.critical_value == pytest.approx(b.critical_value, rel=1e-14)

    def test_first_coordinate_ignores_the_rest(self):
        rng = np.random.default_rng(2)
        for k in (2, 3, 5):
            cov = random_cov(k, rng)
            x = rng.normal(size=k)
            e1 = np.eye(k)[0]
            full = ump_linear_gaussian(x, e1, cov, 0.05, 1.0)
            single = ump_linear_gaussian(x[:1], [1.0], cov[:1, :1], 0.05, 1.0)
            assert (full.reject, full.statistic) == (single.reject, single.statistic)
            assert full.critical_value == pytest.approx(single.critical_value, rel=1e-14)

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_orthogonal_reduction_invariance(self, k):
        rng = np.random.default_rng(10 + k)
        for _ in range(100):
            a = rng.normal(size=k)
            a /= np.linalg.norm(a)
            cov = random_cov(k, rng)
            x = rng.normal(size=k)
            delta = rng.uniform(0.1, 3.0)
            o = random_orthogonal_with_first_row(a, rng)
            before = ump_linear_gaussian(x, a, cov, 0.05, delta)
            after = ump_linear_gaussian(o @ x, np.eye(k)[0], o @ cov @ o.T, 0.05, delta)
            assert abs(before.statistic - after.statistic) <= 1e-9
            assert abs(before.critical_value - after.critical_value) <= 1e-9
            assert before.reject == after.reject

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_regression_reduction_invariance(self, k):
        rng = np.random.default_rng(20 + k)
        for _ in range(100):
            cov = random_cov(k, rng)
            x = rng.normal(size=k)
            beta = cov[0, 1:] / cov[0, 0]
            # y_i = x_i - beta_i x_1 for i > 1 is uncorrelated with x_1
            t = np.eye(k)
            t[1:, 0] = -beta
            y, cov_y = t @ x, t @ cov @ t.T
            assert np.allclose(cov_y[0, 1:], 0.0, atol=1e-12)
            before = ump_linear_gaussian(x, np.eye(k)[0], cov, 0.05, 1.0)
            after = ump_linear_gaussian(y, np.eye(k)[0], cov_y, 0.05, 1.0)
            assert abs(before.statistic - after.statistic) <= 1e-9
            assert abs(before.critical_value - after.critical_value) <= 1e-9
            assert before.reject == after.reject

    def test_singular_covariance_allowed(self):
        cov = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
        d = ump_linear_gaussian([0.1, 0.1, 5.0], [1.0, 1.0, 0.0], cov, 0.05, 1.0)
        assert d.sigma_used == pytest.approx(2.0)

    def test_statistic_and_sigma(self):
        d = ump_linear_gaussian([1.0, 0.4, 9.0], [1.0, -1.0, 0.0], np.eye(3), 0.05, 1.0)
        assert d.statistic == pytest.approx(0.6)
        assert d.sigma_used == pytest.approx(math.sqrt(2.0))

    def test_errors(self):
        with pytest.raises(DomainError):
            ump_linear_gaussian([0.0, 0.0], [1.0, 0.0], [[0.0, 0.0], [0.0, 1.0]], 0.05, 1.0)
        with pytest.raises(DomainError):
            ump_linear_gaussian([0.0, 0.0], [1.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], 0.05, 1.0)
        with pytest.raises(DomainError):
            ump_linear_gaussian([0.0, 0.0], [1.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], 0.05, 1.0)
        with pytest.raises(DomainError):
            ump_linear_gaussian([0.0, 0.0, 0.0], [1.0, 0.0], np.eye(2), 0.05, 1.0)


class TestTOST:
    def test_example(self):
        d = tost(with_moments(100, 0.05, 1.0), 0.05, 0.3)
        # t_{99, 0.95} from a 40-digit mpmath root of the incomplete-beta CDF
        assert d.critical_value == pytest.approx(0.3 - 1.6603911560169908 / 10, rel=1e-12)
        assert d.critical_value == pytest.approx(0.1340, abs=1e-4)
        assert d.reject
        assert d.sigma_used == pytest.approx(1.0)

    def test_never_rejects_with_nonpositive_critical_value(self):
        x = with_moments(20, 0.0, 1.0)
        d = tost(x, 0.05, 0.2)
        assert d.critical_value <= 0.0
        assert not d.reject
        assert d.diagnostics

    def test_p_value_is_larger_one_sided_p(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            x = rng.normal(rng.normal(0, 0.3), 1.0, size=rng.integers(2, 60))
            d = tost(x, 0.05, 0.4)
            n, m, s = x.size, x.mean(), x.std(ddof=1)
            lower = stats.t.sf(math.sqrt(n) * (m + 0.4) / s, n - 1)
            upper = stats.t.cdf(math.sqrt(n) * (m - 0.4) / s, n - 1)
            assert d.p_value == pytest.approx(max(lower, upper), rel=1e-9, abs=1e-15)

    def test_duality(self):
        rng = np.random.default_rng(6)
        for _ in range(300):
            alpha = rng.uniform(0.01, 0.2)
            x = rng.normal(rng.normal(0, 0.2), rng.uniform(0.2, 2), size=rng.integers(2, 80))
            d = tost(x, alpha, rng.uniform(0.05, 1.0))
            assert d.reject == (d.p_value <= alpha)

    def test_rejection_monotone_in_sd(self):
        for mean in (0.0, 0.05, 0.1):
            decisions = [tost(with_moments(50, mean, s), 0.05, 0.4).reject for s in np.linspace(0.05, 2.0, 60)]
            # once it stops rejecting it never starts again
            assert decisions == sorted(decisions, reverse=True)

    def test_degenerate(self):
        with pytest.raises(DegenerateDataError):
            tost([1.0], 0.05, 1.0)
        with pytest.raises(DegenerateDataError):
            tost([2.0, 2.0, 2.0], 0.05, 1.0)


class TestPlugin:
    def test_example(self):
        x = with_moments(100, 0.02, 1.0)
        model = NormalModel()
        d = plugin_test(model, model.default_functional(), x, 0.05, 1.0, sigma_hat=1.0)
        assert d.statistic == pytest.approx(0.2, rel=1e-12)
        assert not d.reject

    def test_normal_reduces_to_direct_formula(self):
        rng = np.random.default_rng(7)
        model = NormalModel()
        g = model.default_functional()
        for _ in range(1000):
            n = int(rng.integers(2, 200))
            x = rng.normal(rng.normal(0, 0.2), rng.uniform(0.3, 2), size=n)
            s = x.std(ddof=1)
            d = plugin_test(model, g, x, 0.05, 1.0, sigma_hat=s)
            direct = math.sqrt(n) * abs(x.mean()) <= critical_value(0.05, 1.0, s)
            assert d.reject == direct

    def test_default_scale_is_mle(self):
        x = with_moments(30, 0.1, 1.0)
        model = NormalModel()
        d = plugin_test(model, model.default_functional(), x, 0.05, 1.0)
        assert d.sigma_used == pytest.approx(np.std(x), rel=1e-14)

    def test_bernoulli_balanced_rejects(self):
        x = np.r_[np.ones(50), np.zeros(50)]
        model = BernoulliModel(0.5)
        for alpha in (0.01, 0.2):
            for delta in (0.1, 2.0):
                d = plugin_test(model, model.default_functional(), x, alpha, delta)
                assert d.statistic == 0.0
                assert d.reject

    def test_bernoulli_clamp_is_reported(self):
        model = BernoulliModel(0.5)
        d = plugin_test(model, model.default_functional(), np.ones(30), 0.05, 1.0)
        assert d.diagnostics and "clamped" in d.diagnostics[0]

    def test_duality(self):
        rng = np.random.default_rng(9)
        model = NormalModel()
        g = model.default_functional()
        for _ in range(300):
            x = rng.normal(rng.normal(0, 0.1), 1.0, size=100)
            alpha = rng.uniform(0.01, 0.3)
            d = plugin_test(model, g, x, alpha, 1.0)
            assert d.reject == (d.p_value <= alpha)

    def test_contains_large_sample_tost_region(self):
        rng = np.random.default_rng(12)
        model = NormalModel()
        g = model.default_functional()
        z = norm_quantile(0.95)
        for _ in range(500):
            n = 400
            x = rng.normal(rng.normal(0, 0.05), 1.0, size=n)
            s = x.std(ddof=1)
            delta = rng.uniform(0.5, 5.0)
            tost_z = abs(x.mean()) <= delta / math.sqrt(n) - s * z / math.sqrt(n)
            if tost_z:
                assert plugin_test(model, g, x, 0.05, delta, sigma_hat=s).reject

    def test_errors_carry_context(self):
        model = NormalModel()
        with pytest.raises(DegenerateDataError, match="plugin test"):
            plugin_test(model, model.default_functional(), np.zeros(5), 0.05, 1.0)
        singular = GaussianMeanModel([[1.0, 1.0], [1.0, 1.0]], a=[1.0, 0.0])
        with pytest.raises(SingularMatrixError, match="plugin test"):
            plugin_test(singular, singular.default_functional(), np.zeros((3, 2)), 0.05, 1.0)


class TestAsymptoticBound:
    def test_normal_matches_exact_power(self):
        model = NormalModel()
        g = model.default_functional()
        for sigma in (0.5, 1.0, 2.0):
            for dp in (0.0, 0.3, 0.9):
                expected = exact_power(dp, EquivalenceSpec(0.05, 1.0, sigma))
                assert asymptotic_power_bound(dp, model, g, [0.0, sigma], 0.05, 1.0) == pytest.approx(expected, rel=1e-14)

    def test_tends_to_alpha_at_the_margin(self):
        model = NormalModel()
        b = asymptotic_power_bound(1.0 - 1e-9, model, model.default_functional(), [0.0, 1.0], 0.05, 1.0)
        assert b == pytest.approx(0.05, abs=1e-8)

    def test_bernoulli_uses_half(self):
        model = BernoulliModel(0.5)
        b = asymptotic_power_bound(0.0, model, model.default_functional(), [0.5], 0.05, 1.0)
        assert b == pytest.approx(exact_power(0.0, EquivalenceSpec(0.05, 1.0, 0.5)), rel=1e-14)

    def test_requires_root_of_g(self):
        model = NormalModel()
        with pytest.raises(DomainError):
            asymptotic_power_bound(0.0, model, model.default_functional(), [0.1, 1.0], 0.05, 1.0)
        with pytest.raises(DomainError):
            asymptotic_power_bound(1.0, model, model.default_functional(), [0.0, 1.0], 0.05, 1.0)
        shifted = FunctionalG.linear([1.0, 0.0], offset=0.1)
        assert asymptotic_power_bound(0.0, model, shifted, [0.1, 1.0], 0.05, 1.0) > 0.05


def test_decision_dict():
    d = tost(with_moments(10, 0.0, 1.0), 0.05, 2.0)
    out = d.to_dict()
    assert set(out) == {
        "method",
        "n",
        "statistic",
        "critical_value",
        "p_value",
        "reject",
        "sigma_used",
        "alpha",
        "delta",
        "diagnostics",
    }
    assert out["method"] == "TOST"


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=40),
    st.floats(0.1, 5.0),
    st.floats(0.001, 0.5),
    st.floats(0.01, 2.0),
)
def test_ump_duality_property(xs, sigma, alpha, Delta):
    d = ump_known_sigma(xs, sigma, alpha, Delta)
    if abs(d.statistic - d.critical_value) > 1e-12:
        assert d.reject == (d.p_value <= alpha)
    assert 0.0 <= d.p_value <= 1.0
