import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpsgam.design import SplineBasisSpec
from lpsgam.families import ResponseFamily
from lpsgam.numdiff import fd_gradient, fd_hessian, relative_error
from lpsgam.simulation import (REPORT_X, SMOOTH_LEVELS, MetricsTable, centered_truth, f1, f2, f3,
                               g1, g2, g3, g4, g5, g6, generate_replicate, make_scenario,
                               run_study, write_metrics_csv)

S2 = math.sin(2.0)
E3 = math.exp(-3.0)

# values at x = 0, 0.5, 1 worked out by hand from the closed forms
TABLE = {
    f1: (0.9, -0.0625 + 0.5 - 1 - 0.1, -1.1),
    f2: (-0.5, 2 * S2 - 0.03125, 4 + 2 * math.sin(4.0)),
    f3: (0.0, -1.0, 0.0),
    g1: (0.0, -0.09375, 1.5),
    g2: (-0.25, S2 - 0.021875, 1.8 + math.sin(4.0)),
    g3: (0.0, 0.0, 0.0),
    g4: (-0.1, math.exp(-0.125) - 0.1, -0.1),
    g5: (-0.65, 0.2 * (0.125 + 2 * (1 + math.pi) * math.exp(-0.1875)) - 0.65,
         0.8 * (1 + 2 * (2 + math.pi) * E3) - 0.65),
    g6: (0.68, -1.12, 0.68),
}


class TestTrueFunctions:
    @pytest.mark.parametrize("f", list(TABLE), ids=lambda f: f.__name__)
    def test_tabulated(self, f):
        np.testing.assert_allclose(f(np.array([0.0, 0.5, 1.0])), TABLE[f], atol=1e-12)

    def test_f3_at_half(self):
        assert f3(0.5) == pytest.approx(-1.0, abs=1e-15)

    def test_centered_truth_has_zero_grid_mean(self):
        spec = SplineBasisSpec()
        assert abs(centered_truth(f1, spec, spec.fine_grid()).mean()) < 1e-12


class TestGenerate:
    def test_gaussian_noise_variance(self):
        sc = make_scenario("normal", n=10000, reps=1, seed=1)
        y, z, x = generate_replicate(sc, 0)
        eta = sc.beta[0] + z @ np.array(sc.beta[1:]) + sum(f(x[:, j]) for j, f in
                                                           enumerate(sc.smooths))
        assert 0.27 <= np.var(y - eta, ddof=1) <= 0.33

    def test_deterministic(self):
        sc = make_scenario("poisson", n=50, reps=3, seed=9)
        for a, b in zip(generate_replicate(sc, 2), generate_replicate(sc, 2)):
            assert np.array_equal(a, b)
        assert not np.array_equal(generate_replicate(sc, 1)[0], generate_replicate(sc, 2)[0])

    def test_replicate_independent_of_order(self):
        sc = make_scenario("bernoulli", n=40, reps=5, seed=4)
        late = generate_replicate(sc, 4)
        for r in range(4):
            generate_replicate(sc, r)
        assert np.array_equal(generate_replicate(sc, 4)[0], late[0])

    @pytest.mark.parametrize("name", ["poisson", "normal", "binomial", "bernoulli", "q6-normal",
                                      "q6-binomial"])
    def test_covariate_law_and_support(self, name):
        sc = make_scenario(name, n=4000, reps=1, seed=0)
        y, z, x = generate_replicate(sc, 0)
        assert set(np.unique(z[:, 0])) <= {0.0, 1.0}
        assert abs(z[:, 0].mean() - 0.5) < 0.05
        assert np.all(np.abs(x) <= 1) and x.shape[1] == sc.q
        sc.family.check_response(y)

    def test_binomial_trials(self):
        assert make_scenario("binomial").family.trials == 15
        assert make_scenario("q6-binomial").family.trials == 20

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            make_scenario("gamma")
        with pytest.raises(ValueError):
            make_scenario("poisson", q=4)
        with pytest.raises(ValueError):
            make_scenario("poisson", reps=0)


def synthetic_table(seed, S=30, p=3, q=2):
    rng = np.random.default_rng(seed)
    return MetricsTable(
        scenario="toy", variant="LPS", beta_true=np.array([0.7, -0.8, 0.4]),
        estimates=rng.normal(0.1, 0.2, (S, p)) + np.array([0.7, -0.8, 0.4]),
        coef_cover={0.90: rng.random((S, p)) < 0.9, 0.95: rng.random((S, p)) < 0.95},
        point_cover={lv: rng.random((S, q, 9)) < lv for lv in SMOOTH_LEVELS},
        domain_cover={lv: rng.random((S, q)) for lv in SMOOTH_LEVELS},
        failures=0, fit_times=rng.random(S))


def permuted(table, perm):
    return MetricsTable(
        table.scenario, table.variant, table.beta_true, table.estimates[perm],
        {k: v[perm] for k, v in table.coef_cover.items()},
        {k: v[perm] for k, v in table.point_cover.items()},
        {k: v[perm] for k, v in table.domain_cover.items()}, table.failures,
        table.fit_times[perm])


class TestMetrics:
    @given(st.integers(0, 10**6), st.integers(2, 60))
    @settings(max_examples=60, deadline=None)
    def test_rmse_identity(self, seed, S):
        t = synthetic_table(seed, S=S)
        lhs = t.rmse**2
        rhs = t.bias**2 + t.ese**2 * (S - 1) / S
        assert np.max(np.abs(lhs - rhs) / lhs) < 1e-10
        assert np.all(t.ese >= 0)

    @given(st.integers(0, 10**6), st.randoms(use_true_random=False))
    @settings(max_examples=40, deadline=None)
    def test_permutation_invariance(self, seed, rnd):
        t = synthetic_table(seed)
        perm = list(range(len(t.estimates)))
        rnd.shuffle(perm)
        u = permuted(t, np.array(perm))
        np.testing.assert_allclose(u.bias, t.bias, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(u.rmse, t.rmse, rtol=1e-12)
        np.testing.assert_allclose(u.ese, t.ese, rtol=1e-12)
        for lv in (0.90, 0.95):
            assert np.array_equal(u.cp(lv), t.cp(lv))
        for lv in SMOOTH_LEVELS:
            assert np.array_equal(u.point_coverage(lv), t.point_coverage(lv))
            np.testing.assert_allclose(u.domain_coverage(lv), t.domain_coverage(lv), rtol=1e-12)

    def test_metrics_csv_layout(self, tmp_path):
        t = synthetic_table(0)
        write_metrics_csv(t, tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 + 2 * len(SMOOTH_LEVELS)
        assert all(f"x={x:+.2f}" in lines[0] for x in REPORT_X)


class TestStudy:
    def test_near_noiseless_gaussian(self):
        sc = make_scenario("normal", n=300, reps=2, seed=5).with_(
            family=ResponseFamily.gaussian(1e-6))
        table = run_study(sc, "LPS")
        assert table.failures == 0
        assert np.all(np.abs(table.bias) < 1e-3)

    def test_small_study_shapes(self):
        sc = make_scenario("poisson", n=150, reps=3, seed=1)
        table = run_study(sc, "LPSMAP")
        assert table.estimates.shape == (3, 3)
        assert table.point_cover[0.95].shape == (3, 3, 9)
        assert np.all((table.domain_coverage(0.99) >= 0) & (table.domain_coverage(0.99) <= 100))
        # wider bands cover at least as much of the domain
        assert np.all(table.domain_cover[0.90] <= table.domain_cover[0.99])

    def test_failures_counted(self, monkeypatch):
        import lpsgam.simulation as sim
        calls = []

        def flaky(scenario, rep, *args):
            calls.append(rep)
            if rep == 1:
                raise RuntimeError("boom")
            return real(scenario, rep, *args)

        real = sim.fit_replicate
        monkeypatch.setattr(sim, "fit_replicate", flaky)
        table = run_study(make_scenario("poisson", n=120, reps=3, seed=2), "LPSMAP")
        assert table.failures == 1 and len(table.estimates) == 2 and calls == [0, 1, 2]

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            run_study(make_scenario("poisson", reps=1), "MCMC")


class TestNumdiff:
    def test_gradient_and_hessian_of_known_function(self):
        def f(x):
            return math.exp(x[0]) * math.sin(x[1]) + x[0] ** 3 * x[1]

        x = np.array([0.4, -1.3])
        g = np.array([math.exp(0.4) * math.sin(-1.3) + 3 * 0.16 * -1.3,
                      math.exp(0.4) * math.cos(-1.3) + 0.4**3])
        H = np.array([[math.exp(0.4) * math.sin(-1.3) + 6 * 0.4 * -1.3,
                       math.exp(0.4) * math.cos(-1.3) + 3 * 0.16],
                      [0.0, -math.exp(0.4) * math.sin(-1.3)]])
        H[1, 0] = H[0, 1]
        assert relative_error(fd_gradient(f, x), g).max() < 1e-9
        assert relative_error(fd_hessian(f, x), H).max() < 1e-7
