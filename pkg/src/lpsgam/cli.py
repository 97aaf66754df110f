"""Command-line interface: ``fit``, ``simulate``, ``check-derivatives``, ``example``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .design import DesignError, SplineBasisSpec, assemble_design
from .explorer import ExplorationError, ExplorerOptions
from .families import ResponseFamily
from .hyperposterior import PenaltyPosterior
from .inference import (FitOptions, FitStageError, coef_credible_interval, fit_lps, fit_lpsmap,
                        smooth_estimate)
from .io import (ConfigError, CsvError, FitReport, format_float, level_tag, load_config,
                 load_csv, write_json)
from .numdiff import fd_gradient, fd_hessian, relative_error
from .simulation import (SIX_SMOOTHS, Scenario, generate_replicate, make_scenario, run_study,
                         write_study)

log = logging.getLogger("lpsgam")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_DESIGN = 3
EXIT_FIT = 4
EXIT_EXPLORE = 5
EXIT_IO = 6


class StageFailure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def build_report(fit, config, design, record_timings: bool = False) -> FitReport:
    levels = config.levels
    names = ["(Intercept)", *config.linear]
    sd = fit.posterior_sd()
    coef_header = ["term", "estimate", "sd"]
    for lv in levels:
        coef_header += [f"lo{level_tag(lv)}", f"hi{level_tag(lv)}"]
    coef_rows = []
    for h, name in enumerate(names):
        row = [name, float(fit.xi_mean[h]), float(sd[h])]
        for lv in levels:
            row.extend(coef_credible_interval(fit, h, lv))
        coef_rows.append(row)

    smooth_tables = {}
    for j, term in enumerate(design.smooths):
        est = smooth_estimate(fit, j, levels)
        header = ["x", "estimate"]
        for lv in levels:
            header += [f"lo{level_tag(lv)}", f"hi{level_tag(lv)}"]
        cols = [est.x, est.estimate]
        for lv in levels:
            cols += list(est.bands[lv])
        rows = [[float(c[i]) for c in cols] for i in range(len(est.x))]
        smooth_tables[term.name] = (header, rows)

    ens = fit.ensemble
    mode = fit.mode
    diag = {
        "variant": fit.variant,
        "v_hat": mode.v_hat,
        "lambda_hat": np.exp(mode.v_hat),
        "mode_iterations": mode.iterations,
        "mode_gradient_supnorm": float(np.max(np.abs(mode.gradient))),
        "mode_clamped": [[it, idx] for it, idx in mode.clamped],
        "hessian_at_mode": mode.hessian,
        "ensemble": {
            "method": ens.method,
            "size": len(ens),
            "acceptance_rate": ens.diagnostics.get("acceptance_rate"),
            "seed": ens.diagnostics.get("seed"),
            "grid_candidates": ens.diagnostics.get("candidates"),
            "grid_kept": ens.diagnostics.get("kept"),
            "grid_threshold": ens.diagnostics.get("threshold"),
        },
        "conditional_fit": {
            "iterations": fit.mode_fit.iterations,
            "converged": fit.mode_fit.converged,
            "clamped_means": fit.mode_fit.n_clamped,
        },
        "n": design.n,
        "latent_dim": design.dim,
        "smooth_domains": {t.name: [t.spec.domain_lo, t.spec.domain_hi] for t in design.smooths},
        "dispersion": fit.family.dispersion,
    }
    if record_timings:
        diag["timings_seconds"] = fit.timings
    cfg = {
        "response": config.response, "family": config.family, "linear": list(config.linear),
        "smooth": [{"name": s.name, "K": s.K, "r": s.r} for s in config.smooth],
        "variant": config.variant, "levels": list(config.levels),
        "explorer": {"method": config.explorer.method, "seed": config.explorer.seed,
                     "alpha": config.explorer.alpha, "grid_points": config.explorer.grid_points,
                     "chain_length": config.explorer.chain_length, "dof": config.explorer.dof},
        "hyperprior": {"nu": config.prior.nu, "a_delta": config.prior.a_delta,
                       "b_delta": config.prior.b_delta, "zeta": config.zeta},
    }
    return FitReport(coef_header, coef_rows, smooth_tables, diag, cfg)


def run_fit(config_path, data_path, out_dir, variant=None, seed=None, method=None,
            record_timings: bool = False) -> int:
    """Fit the configured model to a CSV and write the report files.

    Returns a process exit status: 0 on success, otherwise the code of the
    failing stage (parse=2, design=3, fit=4, explore=5, io=6).
    """
    try:
        return _run_fit(config_path, data_path, out_dir, variant, seed, method, record_timings)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


def _run_fit(config_path, data_path, out_dir, variant, seed, method, record_timings) -> int:
    try:
        config = load_config(config_path)
        data = load_csv(data_path)
        config.check_columns(data)
    except (ConfigError, CsvError, ValueError) as exc:
        raise StageFailure(EXIT_PARSE, f"parse: {exc}") from exc
    except OSError as exc:
        raise StageFailure(EXIT_IO, f"io: {exc}") from exc

    ex = config.explorer
    if seed is not None:
        ex = replace(ex, seed=seed)
    if method is not None:
        ex = replace(ex, method=method)
    config = replace(config, explorer=ex, variant=(variant or config.variant).lower())

    try:
        family = config.build_family(data)
        y = family.check_response(data[config.response])
        x = data.matrix([s.name for s in config.smooth])
        # spline domains follow the observed covariate ranges
        specs = [spec.with_domain(float(col.min()), float(col.max()))
                 for spec, col in zip(config.spline_specs(), x.T)]
        design = assemble_design(data.matrix(list(config.linear)), x, specs,
                                 linear_names=list(config.linear),
                                 smooth_names=[s.name for s in config.smooth])
    except (DesignError, ValueError) as exc:
        raise StageFailure(EXIT_DESIGN, f"design: {exc}") from exc

    opts = FitOptions(prior=config.prior, zeta=config.zeta, explorer=ex)
    try:
        fitter = fit_lpsmap if config.variant == "lpsmap" else fit_lps
        fit = fitter(design, family, y, opts)
    except FitStageError as exc:
        code = EXIT_EXPLORE if exc.stage == "explore" else EXIT_FIT
        raise StageFailure(code, str(exc)) from exc
    except ExplorationError as exc:
        raise StageFailure(EXIT_EXPLORE, f"explore: {exc}") from exc

    report = build_report(fit, config, design, record_timings)
    try:
        report.write(out_dir)
    except OSError as exc:
        raise StageFailure(EXIT_IO, f"io: {exc}") from exc
    return EXIT_OK


# --------------------------------------------------------------------------
# derivative check

def check_derivatives(q: int = 3, seed: int = 0, n: int = 250, points: int = 50,
                      grad_tol: float = 1e-5, hess_tol: float = 1e-4) -> dict:
    """Compare analytic and finite-difference derivatives of ``log p(v | D)``.

    Poisson data with ``q`` smooths; ``points`` values of ``v`` drawn from
    ``U(-4, 8)^q``.
    """
    if q > 3:
        # six-smooth functions on the Poisson scale
        sc = Scenario("poisson-q", ResponseFamily.poisson(), (-1.2, 0.5, -0.4, 0.7),
                      SIX_SMOOTHS[:q], n=n, reps=1, seed=seed)
    else:
        sc = make_scenario("poisson", n=n, reps=1, seed=seed, q=q)
    y, z, x = generate_replicate(sc, 0)
    design = assemble_design(z, x, SplineBasisSpec())
    rng = np.random.default_rng([seed, 1])
    worst_g = worst_h = 0.0
    for _ in range(points):
        v = rng.uniform(-4, 8, q)
        state = PenaltyPosterior.at(design, sc.family, y, v)
        ev = state.evaluate(v)
        worst_g = max(worst_g, float(relative_error(fd_gradient(state.log_density, v),
                                                    ev.gradient).max()))
        worst_h = max(worst_h, float(relative_error(fd_hessian(state.log_density, v),
                                                    ev.hessian).max()))
    return {"q": q, "seed": seed, "n": n, "points": points,
            "max_rel_error_gradient": worst_g, "max_rel_error_hessian": worst_h,
            "gradient_ok": worst_g < grad_tol, "hessian_ok": worst_h < hess_tol}


# --------------------------------------------------------------------------
# entry point

def _cmd_fit(args) -> int:
    return run_fit(args.config, args.data, args.out, args.variant, args.seed, args.method,
                   args.timings)


def _cmd_simulate(args) -> int:
    try:
        sc = make_scenario(args.scenario, n=args.n, reps=args.reps, seed=args.seed, q=args.q)
    except ValueError as exc:
        print(f"error: parse: {exc}", file=sys.stderr)
        return EXIT_PARSE
    opts = FitOptions(explorer=ExplorerOptions(method=args.method, seed=args.seed),
                      full_refit=args.full_refit)
    t0 = time.perf_counter()
    table = run_study(sc, args.variant, opts)
    log.info("study finished in %.1f s with %d failed replicates",
             time.perf_counter() - t0, table.failures)
    try:
        write_study(table, sc, args.out, include_timing=args.timings)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _cmd_check(args) -> int:
    if not 1 <= args.q <= 6:
        print("error: parse: --q must lie in 1..6", file=sys.stderr)
        return EXIT_PARSE
    res = check_derivatives(args.q, args.seed, args.n, args.points)
    print(json.dumps({k: (format_float(v) if isinstance(v, float) else v)
                      for k, v in res.items()}, indent=2))
    if args.out:
        write_json(res, args.out)
    return EXIT_OK if res["gradient_ok"] and res["hessian_ok"] else 1


def _cmd_example(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pkg = resources.files("lpsgam") / "data"
    for name in ("example_poisson.csv", "example_poisson.json"):
        (out / name).write_bytes((pkg / name).read_bytes())
    print(f"wrote {out / 'example_poisson.csv'} and {out / 'example_poisson.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lpsgam",
                                     description="Laplace-P-spline generalized additive models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to a CSV file")
    p.add_argument("--config", required=True, help="JSON model configuration")
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--variant", choices=["lps", "lpsmap"], type=str.lower)
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=["grid", "imh", "mode"], type=str.lower)
    p.add_argument("--timings", action="store_true",
                   help="record wall-clock timings in diagnostics.json (not reproducible)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("simulate", help="run a replicated simulation study")
    p.add_argument("--scenario", required=True,
                   choices=["poisson", "normal", "binomial", "bernoulli", "q6-normal",
                            "q6-binomial"])
    p.add_argument("--n", type=int, default=300)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--q", type=int, help="use only the first q smooth functions")
    p.add_argument("--variant", choices=["lps", "lpsmap"], type=str.lower, default="lps")
    p.add_argument("--method", choices=["grid", "imh", "mode"], type=str.lower)
    p.add_argument("--full-refit", action="store_true",
                   help="refit IRLS weights at every ensemble point")
    p.add_argument("--out", required=True)
    p.add_argument("--timings", action="store_true", help="also write timing.csv")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("check-derivatives",
                       help="compare analytic and finite-difference derivatives")
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--out", help="optional JSON result file")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("example", help="write the bundled synthetic Poisson example")
    p.add_argument("out", help="destination directory")
    p.set_defaults(func=_cmd_example)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)
