import numpy as np
import pytest

from lpsgam.design import SplineBasisSpec, assemble_design, prior_precision
from lpsgam.families import ResponseFamily
from lpsgam.laplace import (NumericalError, fit_conditional, fit_conditional_fixed_weights,
                            penalized_score)

from conftest import gaussian_toy, scenario_data


def closed_form_gaussian(design, sigma2, y, v, zeta=1e-5):
    A = design.B.T @ design.B / sigma2 + prior_precision(design, v, zeta)
    return np.linalg.solve(A, design.B.T @ y / sigma2), np.linalg.inv(A)


class TestGaussianExactness:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_closed_form(self, seed):
        rng = np.random.default_rng(seed)
        q, p = int(rng.integers(1, 4)), int(rng.integers(0, 3))
        sigma2 = float(rng.uniform(0.05, 2.0))
        design, fam, y = gaussian_toy(n=int(rng.integers(60, 150)), q=q, p=p,
                                      K=int(rng.integers(6, 16)), sigma2=sigma2, seed=seed)
        v = rng.uniform(-3, 6, q)
        fit = fit_conditional(design, fam, y, v)
        xi, Sigma = closed_form_gaussian(design, sigma2, y, v)
        assert fit.iterations == 1 and fit.converged
        assert np.max(np.abs(fit.xi_hat - xi)) < 1e-8
        assert np.max(np.abs(fit.Sigma_hat - Sigma)) < 1e-8

    def test_fixed_weights_identical_for_gaussian(self, gaussian_model):
        design, fam, y = gaussian_model
        full = fit_conditional(design, fam, y, [1.3])
        fixed = fit_conditional_fixed_weights(design, fam, y, [1.3], full.W_tilde,
                                              full.varpi_tilde)
        np.testing.assert_allclose(fixed.xi_hat, full.xi_hat, atol=1e-12)
        np.testing.assert_allclose(fixed.Sigma_hat, full.Sigma_hat, atol=1e-12)


class TestNonGaussian:
    def test_poisson_score_vanishes(self, poisson_model):
        design, fam, y = poisson_model
        v = np.array([2.0, 1.0, 3.0])
        fit = fit_conditional(design, fam, y, v)
        assert fit.converged
        score = penalized_score(design, fam, y, prior_precision(design, v), fit.xi_hat)
        assert np.max(np.abs(score)) < 1e-8

    def test_self_consistency(self, poisson_model):
        design, fam, y = poisson_model
        fit = fit_conditional(design, fam, y, np.zeros(3))
        np.testing.assert_allclose(fit.xi_hat, fit.Sigma_hat @ fit.varpi_tilde,
                                   rtol=1e-9, atol=1e-10)

    def test_fixed_point_of_fixed_weights(self, poisson_model):
        design, fam, y = poisson_model
        v = np.array([0.5, 4.0, -1.0])
        full = fit_conditional(design, fam, y, v)
        fixed = fit_conditional_fixed_weights(design, fam, y, v, full.W_tilde, full.varpi_tilde)
        assert np.max(np.abs(fixed.xi_hat - full.xi_hat)) < 1e-10

    def test_fixed_weights_close_to_refit_nearby(self, poisson_model):
        design, fam, y = poisson_model
        v0 = np.array([2.0, 2.0, 2.0])
        anchor = fit_conditional(design, fam, y, v0)
        v1 = v0 + 0.5
        approx = fit_conditional_fixed_weights(design, fam, y, v1, anchor.W_tilde,
                                               anchor.varpi_tilde)
        exact = fit_conditional(design, fam, y, v1)
        err = np.linalg.norm(approx.xi_hat - exact.xi_hat) / np.linalg.norm(exact.xi_hat)
        assert err < 0.1

    @pytest.mark.parametrize("name", ["poisson", "bernoulli", "binomial"])
    def test_objective_monotone(self, name):
        design, fam, y = scenario_data(name, n=200, seed=5)
        fit = fit_conditional(design, fam, y, np.full(3, -2.0))
        trace = np.array(fit.objective_trace)
        assert len(trace) >= 2
        assert np.all(np.diff(trace) >= -1e-10 * np.abs(trace[1:]))

    def test_shrinkage_under_heavy_penalty(self, poisson_model):
        design, fam, y = poisson_model
        norms, rough = [], []
        P = design.smooths[0].P
        for v in (0.0, 5.0, 10.0, 20.0):
            xi = fit_conditional(design, fam, y, np.full(3, v)).xi_hat
            norms.append(np.linalg.norm(xi[design.p + 1:]))
            rough.append(sum(xi[sl] @ P @ xi[sl] for sl in design.smooth_slices()))
        assert np.all(np.diff(norms) < 0)
        # what survives a huge penalty lies in the (near) null space of P
        assert rough[-1] < 1e-6 * rough[0]

    def test_separable_bernoulli_stays_finite(self):
        x = np.linspace(-1, 1, 60)
        y = (x > 0).astype(float)
        design = assemble_design(None, x, SplineBasisSpec(K=8))
        fit = fit_conditional(design, ResponseFamily.bernoulli(), y, [-5.0])
        assert np.all(np.isfinite(fit.xi_hat))
        assert np.all(np.isfinite(fit.Sigma_hat))

    def test_non_pd_system_reports_v(self, gaussian_model):
        design, fam, y = gaussian_model
        with pytest.raises(NumericalError, match="v="):
            fit_conditional(design, fam, y, [0.0], zeta=-1e6)

    def test_non_finite_v(self, gaussian_model):
        design, fam, y = gaussian_model
        with pytest.raises(ValueError):
            fit_conditional(design, fam, y, [np.nan])
