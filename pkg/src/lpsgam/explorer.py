"""Exploration of the log-penalty posterior.

For a handful of smooth terms a Cartesian grid is laid between skew-normal
quantiles of each conditional and filtered by a chi-square cut on the
normalized posterior. With more terms an independence Metropolis-Hastings
chain with a multivariate Student-t proposal is run instead.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr, ndtri, owens_t
from scipy.stats import chi2

from .hyperposterior import V_BOUND, PenaltyMode, PenaltyPosterior
from .laplace import NumericalError

log = logging.getLogger(__name__)

GRID_MAX_Q = 4


class ExplorationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# skew-normal moment matching

@dataclass(frozen=True)
class SkewNormalParams:
    mu: float
    sigma: float
    rho: float
    clamped: bool = False

    @property
    def psi(self) -> float:
        return self.rho / math.sqrt(1.0 + self.rho**2)

    def moments(self):
        """Mean, second and third central moments."""
        return sn_moments(self.mu, self.sigma, self.rho)


def sn_moments(mu, sigma, rho):
    psi = rho / np.sqrt(1.0 + rho**2)
    m1 = mu + sigma * np.sqrt(2 / np.pi) * psi
    m2 = sigma**2 * (1 - 2 / np.pi * psi**2)
    m3 = 0.5 * (4 - np.pi) * sigma**3 * (2 / np.pi) ** 1.5 * psi**3
    return m1, m2, m3


def match_skew_normal(M1: float, M2: float, M3: float) -> SkewNormalParams:
    """Skew-normal with the given mean and second/third central moments.

    Moment triples beyond the skew-normal skewness bound are clamped to a
    shape just inside it and flagged.
    """
    if not M2 > 0:
        raise ValueError(f"second moment must be positive, got {M2}")
    kappa = np.cbrt(M3) * math.sqrt(math.pi) / ((4 - math.pi) ** (1 / 3) * 2 ** (1 / 6)
                                                 * math.sqrt(M2))
    k2 = kappa**2
    psi = float(np.sign(M3)) * math.sqrt(4 * (k2 + 2 * k2**2 / math.pi)) / (2 + 4 * k2 / math.pi)
    clamped = abs(psi) >= 1 - 1e-10
    if clamped:
        psi = math.copysign(1 - 1e-6, psi)
    rho = psi / math.sqrt(1 - psi**2)
    sigma = math.sqrt(M2 / (1 - 2 / math.pi * psi**2))
    mu = M1 - sigma * math.sqrt(2 / math.pi) * psi
    return SkewNormalParams(mu, sigma, rho, clamped)


def sn_cdf(x, params: SkewNormalParams):
    z = (np.asarray(x, dtype=float) - params.mu) / params.sigma
    return ndtr(z) - 2 * owens_t(z, params.rho)


def sn_quantile(params: SkewNormalParams, prob: float) -> float:
    """Inverse of the skew-normal CDF by bracketed root finding."""
    if not 0 < prob < 1:
        raise ValueError(f"probability must lie in (0, 1), got {prob}")
    if params.rho == 0:
        return float(params.mu + params.sigma * ndtri(prob))
    lo, hi = -1.0, 1.0
    while sn_cdf(params.mu + lo * params.sigma, params) > prob:
        lo *= 2
    while sn_cdf(params.mu + hi * params.sigma, params) < prob:
        hi *= 2
    z = brentq(lambda t: float(sn_cdf(params.mu + t * params.sigma, params)) - prob, lo, hi,
               xtol=1e-14, rtol=1e-15, maxiter=500)
    return float(params.mu + z * params.sigma)


# --------------------------------------------------------------------------
# conditional moments

def grid_moments(grid, log_density):
    """Riemann-sum mean and central moments of a density known up to scale."""
    grid = np.asarray(grid, dtype=float)
    lp = np.asarray(log_density, dtype=float)
    delta = grid[1] - grid[0]
    w = np.exp(lp - np.max(lp))
    dens = w / (np.sum(w) * delta)
    m1 = np.sum(grid * dens) * delta
    c = grid - m1
    return m1, np.sum(c**2 * dens) * delta, np.sum(c**3 * dens) * delta, dens * delta


def _safe_log_density(state: PenaltyPosterior, v) -> float:
    try:
        return state.log_density(v)
    except NumericalError:
        return -np.inf


def mode_scales(hessian) -> np.ndarray:
    """Marginal standard deviations from ``(-H)^{-1}``; diagonal fallback if not PD."""
    negH = -np.asarray(hessian)
    try:
        np.linalg.cholesky(negH)
        cov = np.linalg.inv(negH)
        return np.sqrt(np.diag(cov))
    except np.linalg.LinAlgError:
        return 1.0 / np.sqrt(np.maximum(np.diag(negH), 1e-2))


def conditional_moments(state: PenaltyPosterior, j: int, v_hat, sd: float, n_points: int = 200,
                        width: float = 5.0, max_widen: int = 3, bound: float = V_BOUND):
    """Moments of ``p(v_j | v_hat_{-j}, D)`` on an equidistant grid.

    The grid spans ``v_hat_j +/- width * sd`` truncated to ``[-bound, bound]``,
    the admissible range of the log-penalties. It is doubled when more than 1%
    of the mass sits in the two outermost cells of an edge that is not the
    admissible bound.
    """
    v_hat = np.asarray(v_hat, dtype=float)
    for _ in range(max_widen + 1):
        lo = max(v_hat[j] - width * sd, -bound)
        hi = min(v_hat[j] + width * sd, bound)
        grid = np.linspace(lo, hi, n_points)
        lp = np.empty(n_points)
        for i, g in enumerate(grid):
            v = v_hat.copy()
            v[j] = g
            lp[i] = _safe_log_density(state, v)
        m1, m2, m3, mass = grid_moments(grid, lp)
        left_ok = lo <= -bound or mass[:2].sum() <= 0.01
        right_ok = hi >= bound or mass[-2:].sum() <= 0.01
        if left_ok and right_ok:
            return m1, m2, m3
        width *= 2
    raise ExplorationError(f"conditional of v[{j}] keeps mass at the grid boundary")


# --------------------------------------------------------------------------
# ensembles

@dataclass
class PenaltyEnsemble:
    points: np.ndarray
    weights: np.ndarray
    method: str
    log_density: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class ExplorerOptions:
    method: str | None = None  # "grid", "imh", "mode" or None for automatic
    grid_points: int | None = None
    alpha: float = 0.05
    chain_length: int = 500
    dof: float = 3.0
    seed: int = 0
    moment_points: int = 200
    moment_width: float = 5.0


def default_grid_points(q: int) -> int:
    return {1: 7, 2: 7, 3: 5}.get(q, 4)


def grid_threshold(q: int, alpha: float) -> float:
    return math.exp(-0.5 * chi2.ppf(1 - alpha, q))


def mode_only(mode: PenaltyMode) -> PenaltyEnsemble:
    return PenaltyEnsemble(mode.v_hat[None, :].copy(), np.ones(1), "ModeOnly",
                           np.array([mode.log_density]))


def build_grid(state: PenaltyPosterior, mode: PenaltyMode, M: int | None = None,
               alpha: float = 0.05, moment_points: int = 200,
               moment_width: float = 5.0) -> PenaltyEnsemble:
    """Skew-normal calibrated Cartesian grid filtered by ``R(v) >= threshold``."""
    q = state.q
    M = M or default_grid_points(q)
    if M < 2:
        raise ValueError("need at least 2 grid points per dimension")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    v_hat = mode.v_hat
    sds = mode_scales(mode.hessian)
    axes, sn_fits = [], []
    for j in range(q):
        m1, m2, m3 = conditional_moments(state, j, v_hat, sds[j], moment_points, moment_width)
        sn = match_skew_normal(m1, m2, m3)
        sn_fits.append(sn)
        lo = max(sn_quantile(sn, 0.025), -V_BOUND)
        hi = min(sn_quantile(sn, 0.975), V_BOUND)
        axes.append(np.linspace(lo, hi, M))

    candidates = np.array(list(itertools.product(*axes)))
    lp_hat = state.log_density(v_hat)
    lp = np.array([_safe_log_density(state, v) for v in candidates])
    ratio = np.exp(lp - lp_hat)
    threshold = grid_threshold(q, alpha)
    keep = ratio >= threshold
    diagnostics = {"threshold": threshold, "candidates": len(candidates),
                   "kept": int(keep.sum()), "skew_normal": [vars(s) for s in sn_fits]}
    if not keep.any():
        log.warning("no grid point survived filtering; using the mode only")
        ens = mode_only(mode)
        ens.diagnostics.update(diagnostics, fallback=True)
        return ens
    w = ratio[keep]
    return PenaltyEnsemble(candidates[keep], w / w.sum(), "Grid", lp[keep], diagnostics)


def student_t_logpdf(v, loc, chol_scale, dof):
    """Unnormalized multivariate-t log density."""
    z = np.linalg.solve(chol_scale, np.asarray(v) - loc)
    return -0.5 * (dof + len(loc)) * math.log1p(z @ z / dof)


def independence_mh(log_target, loc, scale, chain_length: int, dof: float, rng,
                    log_proposal=None):
    """Independence sampler with a Student-t proposal centred at ``loc``.

    The chain starts at ``loc``; returns ``(states, log_target_values, accept_rate)``.
    """
    loc = np.asarray(loc, dtype=float)
    L = np.linalg.cholesky(scale)
    if log_proposal is None:
        def log_proposal(v):
            return student_t_logpdf(v, loc, L, dof)
    q = len(loc)
    cur, cur_lt, cur_lh = loc.copy(), log_target(loc), log_proposal(loc)
    states = np.empty((chain_length, q))
    lts = np.empty(chain_length)
    accepted = 0
    for m in range(chain_length):
        z = rng.standard_normal(q)
        w = rng.chisquare(dof)
        prop = loc + (L @ z) / math.sqrt(w / dof)
        prop_lt, prop_lh = log_target(prop), log_proposal(prop)
        log_a = (prop_lt + cur_lh) - (cur_lt + prop_lh)
        u = rng.uniform()
        if np.isfinite(prop_lt) and (log_a >= 0 or u <= math.exp(log_a)):
            cur, cur_lt, cur_lh = prop, prop_lt, prop_lh
            accepted += 1
        states[m] = cur
        lts[m] = cur_lt
    return states, lts, accepted / chain_length


def imh_sample(state: PenaltyPosterior, mode: PenaltyMode, chain_length: int = 500,
               dof: float = 3.0, seed: int = 0) -> PenaltyEnsemble:
    """Independence Metropolis-Hastings exploration with uniform weights."""
    if dof <= 2:
        raise ValueError("proposal degrees of freedom must exceed 2")
    negH = -np.asarray(mode.hessian)
    try:
        np.linalg.cholesky(negH)
    except np.linalg.LinAlgError as exc:
        raise ExplorationError("negative Hessian at the penalty mode is not positive definite; "
                               "inspect the mode search diagnostics") from exc
    scale = np.linalg.inv(negH)
    scale = 0.5 * (scale + scale.T)
    rng = np.random.default_rng(seed)
    states, lts, rate = independence_mh(lambda v: _safe_log_density(state, v), mode.v_hat,
                                        scale, chain_length, dof, rng)
    weights = np.full(chain_length, 1.0 / chain_length)
    return PenaltyEnsemble(states, weights, "IMH", lts, {"acceptance_rate": rate, "seed": seed})


def explore(state: PenaltyPosterior, mode: PenaltyMode,
            opts: ExplorerOptions | None = None) -> PenaltyEnsemble:
    """Dispatch to the grid (q <= 4) or the independence sampler."""
    opts = opts or ExplorerOptions()
    method = opts.method or ("grid" if state.q <= GRID_MAX_Q else "imh")
    if method == "grid":
        return build_grid(state, mode, opts.grid_points, opts.alpha, opts.moment_points,
                          opts.moment_width)
    if method == "imh":
        return imh_sample(state, mode, opts.chain_length, opts.dof, opts.seed)
    if method == "mode":
        return mode_only(mode)
    raise ValueError(f"unknown exploration method {method!r}")
