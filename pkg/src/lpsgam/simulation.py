"""Replicated simulation studies: data generation and frequentist metrics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .design import SplineBasisSpec, assemble_design
from .families import ResponseFamily
from .inference import FitOptions, coef_credible_interval, fit_lps, fit_lpsmap, smooth_estimate

log = logging.getLogger(__name__)

REPORT_X = np.array([-0.95, -0.70, -0.50, -0.20, 0.0, 0.20, 0.50, 0.70, 0.95])
COEF_LEVELS = (0.90, 0.95)
SMOOTH_LEVELS = (0.90, 0.95, 0.99)


# --------------------------------------------------------------------------
# true functions

def f1(x):
    return -4 * x**6 + 2 * x**2 + np.cos(2 * np.pi * x) - 0.1


def f2(x):
    return 3 * x**5 + 2 * np.sin(4 * x) + 1.5 * x**2 - 0.5


def f3(x):
    return np.sin(3 * np.pi * x)


def g1(x):
    return 0.5 * (2 * x**5 + 3 * x**2 + np.cos(3 * np.pi * x) - 1)


def g2(x):
    return 1.3 * x**5 + np.sin(4 * x) + 0.75 * x**2 - 0.25


def g3(x):
    return np.sin(4 * np.pi * x)


def g4(x):
    return np.exp(-x**3) * np.sin(2 * np.pi * x**2) - 0.1


def g5(x):
    return 0.8 * x**2 * (x**3 + 2 * np.exp(-3 * x**4 + np.log(2 * x + np.pi))) - 0.65


def g6(x):
    t = 2 * np.pi * x
    return 1.5 * (0.1 * np.sin(t) + 0.2 * np.cos(t) + 0.3 * np.sin(t)**2
                  + 0.4 * np.cos(t)**3 + 0.5 * np.sin(t)**3) - 0.22


THREE_SMOOTHS = (f1, f2, f3)
SIX_SMOOTHS = (g1, g2, g3, g4, g5, g6)


# --------------------------------------------------------------------------
# scenarios

@dataclass(frozen=True)
class Scenario:
    name: str
    family: ResponseFamily
    beta: tuple
    smooths: tuple = field(repr=False)
    n: int = 300
    reps: int = 100
    seed: int = 2024

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    @property
    def q(self) -> int:
        return len(self.smooths)

    def with_(self, **changes) -> "Scenario":
        vals = {k: getattr(self, k) for k in ("name", "family", "beta", "smooths", "n", "reps",
                                              "seed")}
        vals.update(changes)
        return Scenario(**vals)


def make_scenario(name: str, n: int = 300, reps: int = 100, seed: int = 2024,
                  q: int | None = None) -> Scenario:
    """Named scenario; ``q`` truncates the smooth list (used for scaling runs)."""
    three = (-1.5, 0.7, -0.8, 0.4)
    six = (-1.2, 0.5, -0.4, 0.7)
    table = {
        "poisson": (ResponseFamily.poisson(), three, THREE_SMOOTHS),
        "normal": (ResponseFamily.gaussian(0.3), three, THREE_SMOOTHS),
        "binomial": (ResponseFamily.binomial(15), three, THREE_SMOOTHS),
        "bernoulli": (ResponseFamily.bernoulli(), three, THREE_SMOOTHS),
        "q6-normal": (ResponseFamily.gaussian(0.5), six, SIX_SMOOTHS),
        "q6-binomial": (ResponseFamily.binomial(20), six, SIX_SMOOTHS),
    }
    if name not in table:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(table)}")
    family, beta, smooths = table[name]
    if q is not None:
        if not 1 <= q <= len(smooths):
            raise ValueError(f"scenario {name!r} has at most {len(smooths)} smooths")
        smooths = smooths[:q]
    return Scenario(name, family, beta, smooths, n, reps, seed)


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([seed, rep])


def generate_replicate(scenario: Scenario, rep: int):
    """Draw ``(y, z, x)`` for replicate ``rep``; deterministic in ``(seed, rep)``."""
    rng = replicate_rng(scenario.seed, rep)
    n = scenario.n
    z = np.column_stack([rng.binomial(1, 0.5, n), rng.standard_normal(n), rng.standard_normal(n)])
    x = rng.uniform(-1.0, 1.0, (n, scenario.q))
    eta = scenario.beta[0] + z @ np.asarray(scenario.beta[1:])
    eta = eta + sum(f(x[:, j]) for j, f in enumerate(scenario.smooths))
    fam = scenario.family
    kind = fam.kind.value
    if kind == "gaussian":
        y = eta + np.sqrt(fam.dispersion) * rng.standard_normal(n)
    elif kind == "poisson":
        y = rng.poisson(np.exp(eta)).astype(float)
    else:
        p = 1.0 / (1.0 + np.exp(-eta))
        y = rng.binomial(fam.trials, p).astype(float)
    return y, z, x


def centered_truth(f: Callable, spec: SplineBasisSpec, x) -> np.ndarray:
    """True smooth shifted by its fine-grid mean, matching the fitted constraint."""
    return f(np.asarray(x, dtype=float)) - np.mean(f(spec.fine_grid()))


# --------------------------------------------------------------------------
# study

@dataclass
class MetricsTable:
    """Per-coefficient and per-smooth frequentist summaries of a study.

    Coverage values are percentages.
    """

    scenario: str
    variant: str
    beta_true: np.ndarray
    estimates: np.ndarray  # (S_ok, p)
    coef_cover: dict  # level -> (S_ok, p) bool
    point_cover: dict  # level -> (S_ok, q, 9) bool
    domain_cover: dict  # level -> (S_ok, q) fraction
    failures: int
    fit_times: np.ndarray
    acceptance_rates: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def bias(self):
        return self.estimates.mean(axis=0) - self.beta_true

    @property
    def ese(self):
        return self.estimates.std(axis=0, ddof=1) if len(self.estimates) > 1 else \
            np.zeros(self.estimates.shape[1])

    @property
    def rmse(self):
        return np.sqrt(np.mean((self.estimates - self.beta_true) ** 2, axis=0))

    def cp(self, level: float):
        return 100.0 * self.coef_cover[level].mean(axis=0)

    def point_coverage(self, level: float):
        return 100.0 * self.point_cover[level].mean(axis=0)

    def domain_coverage(self, level: float):
        return 100.0 * self.domain_cover[level].mean(axis=0)

    def rows(self):
        """Flat records for metrics.csv."""
        out = []
        for k, b in enumerate(self.beta_true):
            out.append({"kind": "coef", "name": f"beta{k + 1}", "truth": b,
                        "bias": self.bias[k], "ese": self.ese[k], "rmse": self.rmse[k],
                        **{f"cp{round(100 * lv)}": self.cp(lv)[k] for lv in COEF_LEVELS}})
        q = next(iter(self.domain_cover.values())).shape[1]
        for j in range(q):
            for lv in self.domain_cover:
                row = {"kind": "smooth", "name": f"f{j + 1}", "level": lv,
                       "domain": self.domain_coverage(lv)[j]}
                pc = self.point_coverage(lv)[j]
                row.update({f"x={x:+.2f}": c for x, c in zip(REPORT_X, pc)})
                out.append(row)
        return out


def fit_replicate(scenario: Scenario, rep: int, variant: str = "LPS",
                  opts: FitOptions | None = None, spec: SplineBasisSpec | None = None,
                  domain_x=None):
    """Fit one replicate; returns coefficient and smooth coverage records."""
    spec = spec or SplineBasisSpec()
    y, z, x = generate_replicate(scenario, rep)
    design = assemble_design(z, x, spec)
    fitter = fit_lps if variant == "LPS" else fit_lpsmap
    t0 = time.perf_counter()
    fit = fitter(design, scenario.family, y, opts)
    elapsed = time.perf_counter() - t0

    beta = np.asarray(scenario.beta[1:])
    p = len(beta)
    est = fit.xi_mean[1:p + 1]
    coef_cover = {}
    for lv in COEF_LEVELS:
        ci = np.array([coef_credible_interval(fit, h, lv) for h in range(1, p + 1)])
        coef_cover[lv] = (ci[:, 0] <= beta) & (beta <= ci[:, 1])

    domain_x = np.linspace(-1, 1, 200) if domain_x is None else domain_x
    xs = np.concatenate([REPORT_X, domain_x])
    point = {lv: np.empty((scenario.q, len(REPORT_X)), bool) for lv in SMOOTH_LEVELS}
    domain = {lv: np.empty(scenario.q) for lv in SMOOTH_LEVELS}
    for j, f in enumerate(scenario.smooths):
        truth = centered_truth(f, spec, xs)
        sm = smooth_estimate(fit, j, SMOOTH_LEVELS, x=xs)
        for lv in SMOOTH_LEVELS:
            lo, hi = sm.bands[lv]
            hit = (lo <= truth) & (truth <= hi)
            point[lv][j] = hit[:len(REPORT_X)]
            domain[lv][j] = hit[len(REPORT_X):].mean()
    rate = fit.ensemble.diagnostics.get("acceptance_rate", np.nan)
    return est, coef_cover, point, domain, elapsed, rate


def run_study(scenario: Scenario, variant: str = "LPS", opts: FitOptions | None = None,
              spec: SplineBasisSpec | None = None, progress=None) -> MetricsTable:
    """Fit every replicate and aggregate bias, ESE, RMSE and coverage.

    Failed replicates are logged, counted and excluded.
    """
    variant = variant.upper()
    if variant not in ("LPS", "LPSMAP"):
        raise ValueError(f"unknown variant {variant!r}")
    records, failures = [], 0
    for rep in range(scenario.reps):
        try:
            records.append(fit_replicate(scenario, rep, variant, opts, spec))
        except Exception as exc:  # recorded, not fatal
            failures += 1
            log.warning("replicate %d failed: %s", rep, exc)
        if progress:
            progress(rep)
    if not records:
        raise RuntimeError(f"all {scenario.reps} replicates failed")
    est = np.array([r[0] for r in records])
    return MetricsTable(
        scenario=scenario.name, variant=variant, beta_true=np.asarray(scenario.beta[1:]),
        estimates=est,
        coef_cover={lv: np.array([r[1][lv] for r in records]) for lv in COEF_LEVELS},
        point_cover={lv: np.array([r[2][lv] for r in records]) for lv in SMOOTH_LEVELS},
        domain_cover={lv: np.array([r[3][lv] for r in records]) for lv in SMOOTH_LEVELS},
        failures=failures, fit_times=np.array([r[4] for r in records]),
        acceptance_rates=np.array([r[5] for r in records]))


def mean_fit_time(name: str, n: int, q: int | None = None, seeds=range(5),
                  variant: str = "LPS", opts: FitOptions | None = None,
                  repeats: int = 3) -> float:
    """Average wall-clock fit time over independent datasets.

    Data generation and design assembly are excluded. Each dataset is timed
    ``repeats`` times and the fastest run is kept, which filters scheduler
    noise; one untimed fit warms up lazily loaded code paths.
    """
    fitter = fit_lps if variant.upper() == "LPS" else fit_lpsmap
    cases = []
    for s in seeds:
        sc = make_scenario(name, n=n, reps=1, seed=s, q=q)
        y, z, x = generate_replicate(sc, 0)
        cases.append((assemble_design(z, x, SplineBasisSpec()), sc.family, y))
    fitter(*cases[0], opts)
    times = []
    for design, family, y in cases:
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            fitter(design, family, y, opts)
            best = min(best, time.perf_counter() - t0)
        times.append(best)
    return float(np.mean(times))


def write_metrics_csv(table: MetricsTable, path) -> None:
    from .io import format_float
    rows = table.rows()
    keys = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: format_float(v) if isinstance(v, (float, np.floating)) else v
                        for k, v in r.items()})


def write_timing_csv(rows, path) -> None:
    from .io import format_float
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "variant", "n", "q", "reps", "mean_seconds"])
        for r in rows:
            w.writerow([r[0], r[1], r[2], r[3], r[4], format_float(r[5])])


def write_study(table: MetricsTable, scenario: Scenario, out_dir, include_timing=True) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(table, out / "metrics.csv")
    if include_timing:
        write_timing_csv([(scenario.name, table.variant, scenario.n, scenario.q,
                           len(table.fit_times), float(table.fit_times.mean()))],
                         out / "timing.csv")
