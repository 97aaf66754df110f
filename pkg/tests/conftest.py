"""Shared small models for the test suite."""

import numpy as np
import pytest

from lpsgam.design import SplineBasisSpec, assemble_design
from lpsgam.families import ResponseFamily
from lpsgam.simulation import generate_replicate, make_scenario


def gaussian_toy(n=40, q=1, p=1, K=8, sigma2=0.2, seed=0):
    """Small Gaussian additive model with smooth sine signals."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (n, q))
    z = rng.normal(size=(n, p))
    eta = 0.5 + z @ np.full(p, 0.3) + np.sin(2 * x).sum(axis=1)
    y = eta + rng.normal(scale=np.sqrt(sigma2), size=n)
    design = assemble_design(z, x, SplineBasisSpec(K=K))
    return design, ResponseFamily.gaussian(sigma2), y


def scenario_data(name="poisson", n=250, q=None, rep=0, seed=11, K=15):
    scen = make_scenario(name, n=n, reps=1, seed=seed, q=q)
    y, z, x = generate_replicate(scen, rep)
    design = assemble_design(z, x, SplineBasisSpec(K=K))
    return design, scen.family, y


@pytest.fixture(scope="session")
def poisson_model():
    return scenario_data("poisson", n=250)


@pytest.fixture(scope="session")
def gaussian_model():
    return gaussian_toy()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
