"""Mixture posterior of the latent field and derived credible intervals."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .design import GamDesign
from .explorer import ExplorerOptions, PenaltyEnsemble, explore, mode_only
from .families import ResponseFamily
from .hyperposterior import ModeOptions, PenaltyHyperPrior, PenaltyMode, PenaltyPosterior, find_mode_v
from .laplace import (ConditionalLaplaceFit, NewtonOptions, fit_conditional,
                      fit_conditional_fixed_weights)


class FitStageError(RuntimeError):
    """Failure inside one stage of the fitting pipeline."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class GamFit:
    """Gaussian-mixture posterior of the latent field.

    Attributes
    ----------
    ensemble : PenaltyEnsemble
        Penalty points and their weights.
    components : list of ConditionalLaplaceFit
        One conditional fit per ensemble point (shared objects for repeated points).
    xi_mean : ndarray
        Mixture mean ``sum_m w_m xi_hat_m``.
    mode_fit : ConditionalLaplaceFit
        Conditional fit at the penalty mode.
    variant : str
        ``"LPS"`` or ``"LPSMAP"``.
    """

    design: GamDesign
    family: ResponseFamily
    ensemble: PenaltyEnsemble
    components: list = field(repr=False)
    xi_mean: np.ndarray
    mode_fit: ConditionalLaplaceFit = field(repr=False)
    mode: PenaltyMode | None = field(default=None, repr=False)
    variant: str = "LPS"
    timings: dict = field(default_factory=dict)

    @property
    def weights(self) -> np.ndarray:
        return self.ensemble.weights

    @property
    def component_means(self) -> np.ndarray:
        return np.array([c.xi_hat for c in self.components])

    def marginal(self, h: int):
        """Means and variances of coordinate ``h`` across components."""
        mu = np.array([c.xi_hat[h] for c in self.components])
        var = np.array([c.Sigma_hat[h, h] for c in self.components])
        return mu, var

    def linear_moments(self, a):
        """Component means and variances of the linear functional ``a' xi``."""
        a = np.asarray(a, dtype=float)
        mu = np.array([c.xi_hat @ a for c in self.components])
        var = np.array([a @ c.Sigma_hat @ a for c in self.components])
        return mu, var

    def posterior_sd(self) -> np.ndarray:
        """Marginal standard deviations of the mixture."""
        second = sum(w * (np.diag(c.Sigma_hat) + c.xi_hat**2)
                     for w, c in zip(self.weights, self.components))
        return np.sqrt(np.maximum(second - self.xi_mean**2, 0.0))


def mixture_cdf(x, weights, means, sds):
    x = np.asarray(x, dtype=float)
    return np.sum(weights * ndtr((x[..., None] - means) / sds), axis=-1)


def mixture_quantile(probs, weights, means, variances, tol: float = 1e-10):
    """Quantiles of a univariate Gaussian mixture by bisection.

    ``means`` and ``variances`` have shape ``(..., M)``; ``probs`` broadcasts
    against the leading shape.
    """
    weights = np.asarray(weights, dtype=float)
    means = np.asarray(means, dtype=float)
    sds = np.sqrt(np.asarray(variances, dtype=float))
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= 0) | (probs >= 1)):
        raise ValueError("probabilities must lie in (0, 1)")
    lo = means.min(axis=-1) - 10 * sds.max(axis=-1)
    hi = means.max(axis=-1) + 10 * sds.max(axis=-1)
    shape = np.broadcast_shapes(lo.shape, probs.shape)
    lo, hi = np.broadcast_to(lo, shape).copy(), np.broadcast_to(hi, shape).copy()
    probs = np.broadcast_to(probs, shape)
    m_b = np.broadcast_to(means, shape + means.shape[-1:])
    s_b = np.broadcast_to(sds, shape + sds.shape[-1:])
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        below = np.sum(weights * ndtr((mid[..., None] - m_b) / s_b), axis=-1) < probs
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        # stop if bisection has hit float resolution
        if np.all((hi - lo) <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(lo))):
            break
    return 0.5 * (lo + hi)


def _tails(level: float):
    if not 0 < level < 1:
        raise ValueError(f"credible level must lie in (0, 1), got {level}")
    a = (1 - level) / 2
    return np.array([a, 1 - a])


def coef_credible_interval(fit: GamFit, h: int, level: float = 0.95):
    """Quantile-based credible interval of latent coordinate ``h``."""
    tails = _tails(level)
    mu, var = fit.marginal(h)
    if fit.variant == "LPSMAP":
        z = ndtri(tails[1])
        sd = np.sqrt(var[0])
        return float(mu[0] - z * sd), float(mu[0] + z * sd)
    lo, hi = mixture_quantile(tails, fit.weights, mu, var)
    return float(lo), float(hi)


@dataclass
class SmoothEstimate:
    x: np.ndarray
    estimate: np.ndarray
    bands: dict  # level -> (lo, hi)


def _basis_moments(fit: GamFit, j: int, basis):
    sl = fit.design.smooth_slices()[j]
    means = np.stack([basis @ c.xi_hat[sl] for c in fit.components], axis=-1)
    variances = np.stack([np.einsum("lk,kr,lr->l", basis, c.Sigma_hat[sl, sl], basis)
                          for c in fit.components], axis=-1)
    return means, np.maximum(variances, 0.0)


def smooth_estimate(fit: GamFit, j: int, levels=(0.95,), x=None) -> SmoothEstimate:
    """Mixture mean and pointwise credible bands of smooth ``j``.

    Evaluated on the design's fine grid unless ``x`` is given.
    """
    term = fit.design.smooths[j]
    if x is None:
        xs, basis = term.grid, term.fine_basis
    else:
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        basis = term.basis(xs)
    means, variances = _basis_moments(fit, j, basis)
    estimate = means @ fit.weights
    bands = {}
    for level in levels:
        tails = _tails(level)
        if fit.variant == "LPSMAP":
            half = ndtri(tails[1]) * np.sqrt(variances[:, 0])
            bands[level] = (means[:, 0] - half, means[:, 0] + half)
        else:
            q = mixture_quantile(tails[:, None], fit.weights, means[None], variances[None])
            bands[level] = (q[0], q[1])
    return SmoothEstimate(xs, estimate, bands)


# --------------------------------------------------------------------------
# pipeline

@dataclass(frozen=True)
class FitOptions:
    prior: PenaltyHyperPrior = PenaltyHyperPrior()
    zeta: float = 1e-5
    newton: NewtonOptions = NewtonOptions()
    mode: ModeOptions = ModeOptions()
    explorer: ExplorerOptions = ExplorerOptions()
    full_refit: bool = False
    v0: tuple | None = None


def _locate_mode(design, family, y, opts: FitOptions) -> PenaltyMode:
    v0 = np.zeros(design.q) if opts.v0 is None else np.asarray(opts.v0, dtype=float)
    try:
        state = PenaltyPosterior.at(design, family, y, v0, opts.prior, opts.zeta, opts.newton)
        return find_mode_v(state, v0, opts.mode)
    except Exception as exc:
        raise FitStageError("mode", exc) from exc


def assemble_mixture(design, family, y, mode: PenaltyMode, ensemble: PenaltyEnsemble,
                     opts: FitOptions, variant: str = "LPS") -> GamFit:
    """Conditional fits at every ensemble point, combined into a mixture."""
    anchor = mode.posterior.anchor
    BtWB = mode.posterior.BtWB
    cache = {}
    components = []
    for v in ensemble.points:
        key = v.tobytes()
        if key not in cache:
            if opts.full_refit:
                cache[key] = fit_conditional(design, family, y, v, opts.zeta, opts.newton,
                                             xi0=anchor.xi_hat)
            else:
                cache[key] = fit_conditional_fixed_weights(
                    design, family, y, v, anchor.W_tilde, anchor.varpi_tilde, opts.zeta, BtWB)
        components.append(cache[key])
    xi_mean = np.sum(ensemble.weights[:, None] * np.array([c.xi_hat for c in components]), axis=0)
    return GamFit(design, family, ensemble, components, xi_mean, anchor, mode, variant)


def fit_lps(design: GamDesign, family: ResponseFamily, y, opts: FitOptions | None = None) -> GamFit:
    """Mode search, exploration of the penalty posterior and mixture assembly."""
    opts = opts or FitOptions()
    y = np.asarray(y, dtype=float)
    t0 = time.perf_counter()
    mode = _locate_mode(design, family, y, opts)
    t1 = time.perf_counter()
    try:
        ensemble = explore(mode.posterior, mode, opts.explorer)
    except Exception as exc:
        raise FitStageError("explore", exc) from exc
    t2 = time.perf_counter()
    try:
        fit = assemble_mixture(design, family, y, mode, ensemble, opts)
    except Exception as exc:
        raise FitStageError("fit", exc) from exc
    fit.timings = {"mode": t1 - t0, "explore": t2 - t1, "mixture": time.perf_counter() - t2}
    return fit


def fit_lpsmap(design: GamDesign, family: ResponseFamily, y,
               opts: FitOptions | None = None) -> GamFit:
    """Plug-in fit at the posterior mode of the log-penalties."""
    opts = opts or FitOptions()
    y = np.asarray(y, dtype=float)
    t0 = time.perf_counter()
    mode = _locate_mode(design, family, y, opts)
    t1 = time.perf_counter()
    try:
        fit = assemble_mixture(design, family, y, mode, mode_only(mode), opts, "LPSMAP")
    except Exception as exc:
        raise FitStageError("fit", exc) from exc
    fit.timings = {"mode": t1 - t0, "explore": 0.0, "mixture": time.perf_counter() - t1}
    return fit
