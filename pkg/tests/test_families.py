import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpsgam.families import (DomainError, ResponseFamily, cumulant, cumulant_d1, cumulant_d2,
                             make_family, working_weights)

FAMILIES = [
    ResponseFamily.gaussian(0.3),
    ResponseFamily.poisson(),
    ResponseFamily.binomial(15),
    ResponseFamily.bernoulli(),
]


class TestCumulant:
    def test_poisson_at_zero(self):
        fam = ResponseFamily.poisson()
        assert cumulant(fam, 0.0) == 1.0
        assert cumulant_d1(fam, 0.0) == 1.0
        assert cumulant_d2(fam, 0.0) == 1.0

    def test_binomial_mean_at_zero(self):
        assert cumulant_d1(ResponseFamily.binomial(15), 0.0) == pytest.approx(7.5, abs=1e-14)

    def test_gaussian_derivatives(self):
        fam = ResponseFamily.gaussian(1.0)
        assert cumulant_d1(fam, 2.5) == 2.5
        assert cumulant_d2(fam, 2.5) == 1.0
        assert cumulant(fam, 2.5) == pytest.approx(3.125)

    def test_binomial_is_overflow_safe(self):
        fam = ResponseFamily.binomial(4)
        s = cumulant(fam, np.array([-800.0, 800.0]))
        assert np.all(np.isfinite(s))
        assert s[1] == pytest.approx(4 * 800.0)
        assert cumulant_d2(fam, 800.0) >= 0

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
    def test_non_finite_gamma(self, bad):
        with pytest.raises(DomainError):
            cumulant(ResponseFamily.poisson(), np.array([0.0, bad]))

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind.value)
    def test_derivatives_match_finite_differences(self, fam):
        rng = np.random.default_rng(3)
        gamma = rng.uniform(-4, 4, 200)
        h = 1e-5 * np.maximum(1.0, np.abs(gamma))
        d1 = (fam.s(gamma + h) - fam.s(gamma - h)) / (2 * h)
        d2 = (fam.ds(gamma + h) - fam.ds(gamma - h)) / (2 * h)
        assert np.max(np.abs(d1 - fam.ds(gamma)) / np.abs(fam.ds(gamma))) < 1e-6
        assert np.max(np.abs(d2 - fam.d2s(gamma)) / np.abs(fam.d2s(gamma))) < 1e-6


class TestWorkingWeights:
    def test_gaussian_constant(self):
        w = working_weights(ResponseFamily.gaussian(0.3), np.array([-3.0, 0.0, 7.0]))
        np.testing.assert_allclose(w, 1 / 0.3, rtol=1e-15)

    def test_poisson_equals_mean(self):
        assert working_weights(ResponseFamily.poisson(), np.array([2.0]))[0] == pytest.approx(2.0)

    def test_bernoulli_half(self):
        assert working_weights(ResponseFamily.bernoulli(), np.array([0.5]))[0] == 0.25

    @pytest.mark.parametrize("fam", FAMILIES, ids=lambda f: f.kind.value)
    def test_canonical_link_identity(self, fam):
        gamma = np.linspace(-5, 5, 101)
        w = fam.working_weights(fam.mean(gamma))
        expected = fam.d2s(gamma) / fam.dispersion
        assert np.max(np.abs(w - expected) / expected) < 1e-12

    def test_boundary_means_are_clamped(self):
        fam = ResponseFamily.bernoulli()
        w = fam.working_weights(np.array([0.0, 1.0]))
        assert np.all(w > 0) and np.all(np.isfinite(w))
        mu, n = fam.clamp_mean(np.array([0.0, 0.5, 1.0]))
        assert n == 2
        assert ResponseFamily.poisson().clamp_mean(np.array([0.0]))[1] == 1


class TestBinomialBernoulli:
    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=20))
    @settings(max_examples=60, deadline=None)
    def test_trials_one_is_bernoulli(self, gammas):
        g = np.array(gammas)
        a, b = ResponseFamily.binomial(1), ResponseFamily.bernoulli()
        for name in ("s", "ds", "d2s"):
            assert np.array_equal(getattr(a, name)(g), getattr(b, name)(g))
        mu = b.mean(g)
        assert np.array_equal(a.working_weights(mu), b.working_weights(mu))
        y = (g > 0).astype(float)
        assert a.loglik(y, g) == b.loglik(y, g)


class TestValidation:
    def test_dispersion_positive(self):
        with pytest.raises(ValueError):
            ResponseFamily.gaussian(0.0)

    def test_bernoulli_trials(self):
        with pytest.raises(ValueError):
            ResponseFamily("bernoulli", trials=2)

    def test_poisson_dispersion_fixed(self):
        with pytest.raises(ValueError):
            ResponseFamily("poisson", dispersion=2.0)

    def test_make_family(self):
        assert make_family("Poisson").kind.value == "poisson"
        assert make_family("binomial", trials=20).trials == 20
        with pytest.raises(ValueError):
            make_family("gaussian")

    @pytest.mark.parametrize("fam,y", [
        (ResponseFamily.poisson(), [1.0, -1.0]),
        (ResponseFamily.poisson(), [1.0, 0.5]),
        (ResponseFamily.bernoulli(), [0.0, 2.0]),
        (ResponseFamily.binomial(15), [3.0, 16.0]),
    ])
    def test_check_response_names_index(self, fam, y):
        with pytest.raises(DomainError, match=r"y\[1\]"):
            fam.check_response(y)

    def test_check_response_accepts_support(self):
        y = np.array([0.0, 15.0, 7.0])
        np.testing.assert_array_equal(ResponseFamily.binomial(15).check_response(y), y)
