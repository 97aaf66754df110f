"""Approximate marginal posterior of the log-penalty vector.

``log p(v | D)`` is evaluated with the IRLS weights ``W`` and working vector
``varpi`` frozen at an *anchor* conditional fit. Value, gradient and Hessian
all use the same frozen quantities, so the analytic derivatives are exact
derivatives of the evaluated function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import expit

from .design import GamDesign, prior_precision
from .families import ResponseFamily
from .laplace import (ConditionalLaplaceFit, NewtonOptions, NumericalError, chol,
                      fit_conditional, inverse_from_chol)

V_BOUND = 15.0


@dataclass(frozen=True)
class PenaltyHyperPrior:
    """``lambda_j | delta_j ~ G(nu/2, nu delta_j/2)``, ``delta_j ~ G(a, b)``."""

    nu: float = 3.0
    a_delta: float = 1e-4
    b_delta: float = 1e-4

    def __post_init__(self):
        for name in ("nu", "a_delta", "b_delta"):
            val = getattr(self, name)
            if not (np.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive, got {val}")


@dataclass
class PenaltyPosteriorEval:
    v: np.ndarray
    log_density: float
    gradient: np.ndarray | None = None
    hessian: np.ndarray | None = None
    xi: np.ndarray | None = field(default=None, repr=False)
    M: np.ndarray | None = field(default=None, repr=False)


def hyperprior_term(v, prior: PenaltyHyperPrior):
    """``-(nu/2 + a) log(b + nu/2 e^v)`` and its first two derivatives."""
    v = np.asarray(v, dtype=float)
    c = prior.nu / 2 + prior.a_delta
    u = v - np.log(2 * prior.b_delta / prior.nu)
    val = -c * np.logaddexp(np.log(prior.b_delta), np.log(prior.nu / 2) + v)
    e = expit(u)
    return val, -c * e, -c * e * (1.0 - e)


class PenaltyPosterior:
    """Evaluator of ``log p(v | D)`` for a fixed anchor ``(W, varpi)``.

    Parameters
    ----------
    design, family, y :
        Model and data.
    anchor : ConditionalLaplaceFit
        Fit providing the frozen weights and working vector.
    prior : PenaltyHyperPrior
    zeta : float
        Prior precision of the linear coefficients.
    """

    def __init__(self, design: GamDesign, family: ResponseFamily, y, anchor: ConditionalLaplaceFit,
                 prior: PenaltyHyperPrior | None = None, zeta: float = 1e-5,
                 newton: NewtonOptions | None = None):
        self.design = design
        self.family = family
        self.y = np.asarray(y, dtype=float)
        self.anchor = anchor
        self.prior = prior or PenaltyHyperPrior()
        self.zeta = zeta
        self.newton = newton or NewtonOptions()
        self.BtWB = design.B.T @ (anchor.W_tilde[:, None] * design.B)
        self.varpi = anchor.varpi_tilde
        self.slices = design.smooth_slices()
        self.blocks = [s.P for s in design.smooths]
        self.c_linear = (self.prior.nu + design.K - 1) / 2.0

    @classmethod
    def at(cls, design, family, y, v, prior=None, zeta=1e-5, newton=None, xi0=None):
        """Anchor the evaluator at the converged conditional fit at ``v``."""
        fit = fit_conditional(design, family, y, v, zeta, newton, xi0=xi0)
        return cls(design, family, y, fit, prior, zeta, newton)

    def reanchor(self, v) -> "PenaltyPosterior":
        return PenaltyPosterior.at(self.design, self.family, self.y, v, self.prior, self.zeta,
                                   self.newton, xi0=self.anchor.xi_hat)

    @property
    def q(self) -> int:
        return self.design.q

    def _check(self, v):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if v.shape != (self.q,):
            raise ValueError(f"expected {self.q} log-penalties, got shape {v.shape}")
        return v

    def _value_parts(self, v, cf):
        xi = cho_solve(cf, self.varpi, check_finite=False)
        eta = self.design.B @ xi
        Q = prior_precision(self.design, v, self.zeta)
        logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
        prior_val, _, _ = hyperprior_term(v, self.prior)
        val = (-0.5 * logdet + self.c_linear @ v + self.family.loglik(self.y, eta)
               - 0.5 * xi @ Q @ xi + np.sum(prior_val))
        return float(val), xi, eta, Q

    def factor(self, v):
        v = self._check(v)
        return chol(self.BtWB + prior_precision(self.design, v, self.zeta), v)

    def log_density(self, v) -> float:
        v = self._check(v)
        return self._value_parts(v, self.factor(v))[0]

    def evaluate(self, v, hessian: bool = True) -> PenaltyPosteriorEval:
        """Value, analytic gradient and (optionally) Hessian at ``v``."""
        v = self._check(v)
        cf = self.factor(v)
        val, xi, eta, Q = self._value_parts(v, cf)
        M = inverse_from_chol(cf)
        fam, B = self.family, self.design.B
        q, dim = self.q, self.design.dim
        lam = np.exp(v)

        # P~_j xi, with P~_j = dA/dv_j nonzero only on block j
        PX = np.zeros((dim, q))
        trMP = np.empty(q)
        for j, (sl, P) in enumerate(zip(self.slices, self.blocks)):
            PX[sl, j] = lam[j] * (P @ xi[sl])
            trMP[j] = lam[j] * np.sum(M[sl, sl] * P)
        D = -M @ PX  # d xi / d v_j
        r = B.T @ (self.y - fam.ds(eta)) / fam.dispersion - Q @ xi
        xPx = np.einsum("i,ij->j", xi, PX)
        _, prior_g, prior_h = hyperprior_term(v, self.prior)
        grad = -0.5 * trMP + self.c_linear - 0.5 * xPx + r @ D + prior_g

        if not hessian:
            return PenaltyPosteriorEval(v, val, grad, None, xi, M)

        T2 = np.empty((q, q))
        MP = [[lam[k] * (M[self.slices[j], self.slices[k]] @ self.blocks[k]) for k in range(q)]
              for j in range(q)]
        for j in range(q):
            for k in range(j, q):
                # tr(M P_k M P_j) = sum(M_jk P_k o (M_kj P_j)^T)
                T2[j, k] = T2[k, j] = np.sum(MP[j][k] * MP[k][j].T)
        m = M @ r
        PM = np.zeros((dim, q))
        for j, (sl, P) in enumerate(zip(self.slices, self.blocks)):
            PM[sl, j] = lam[j] * (P @ m[sl])
        U = B @ D
        sw = fam.d2s(eta) / fam.dispersion
        H = (0.5 * T2 - D.T @ PX - PX.T @ D - U.T @ (sw[:, None] * U) - D.T @ Q @ D
             - PM.T @ D - D.T @ PM)
        H[np.diag_indices(q)] += -0.5 * trMP - 0.5 * xPx + r @ D + prior_h
        H = 0.5 * (H + H.T)
        return PenaltyPosteriorEval(v, val, grad, H, xi, M)


def log_posterior_v(state: PenaltyPosterior, v) -> float:
    return state.log_density(v)


def grad_log_posterior_v(state: PenaltyPosterior, v) -> np.ndarray:
    return state.evaluate(v, hessian=False).gradient


def hess_log_posterior_v(state: PenaltyPosterior, v) -> np.ndarray:
    return state.evaluate(v).hessian


class ModeSearchError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ModeOptions:
    gtol: float = 1e-6
    xtol: float = 1e-8
    max_iter: int = 500
    max_halvings: int = 10
    max_step: float = 5.0
    bound: float = V_BOUND


@dataclass
class PenaltyMode:
    v_hat: np.ndarray
    hessian: np.ndarray
    gradient: np.ndarray
    log_density: float
    iterations: int
    posterior: PenaltyPosterior = field(repr=False)
    clamped: list = field(default_factory=list)
    trace: list = field(default_factory=list, repr=False)


def _active_bounds(v, g, bound):
    """Components pinned at a bound whose gradient points outward."""
    return ((v >= bound) & (g > 0)) | ((v <= -bound) & (g < 0))


def find_mode_v(state: PenaltyPosterior, v0=None, opts: ModeOptions | None = None) -> PenaltyMode:
    """Newton-Raphson search for the mode of ``log p(v | D)``.

    The anchor fit is refreshed at every outer iterate; within an iteration the
    step is damped by halving on the anchored objective. Iterates are clamped
    to ``[-bound, bound]``; components held at a bound by an outward gradient
    are frozen and convergence is judged on the projected gradient.
    """
    opts = opts or ModeOptions()
    q = state.q
    v = np.zeros(q) if v0 is None else np.array(v0, dtype=float).reshape(q)
    v = np.clip(v, -opts.bound, opts.bound)
    if not np.allclose(state.anchor.v, v):
        state = state.reanchor(v)
    trace, clamped = [], []
    ev = None
    for it in range(1, opts.max_iter + 1):
        ev = state.evaluate(v)
        active = _active_bounds(v, ev.gradient, opts.bound)
        g = np.where(active, 0.0, ev.gradient)
        gnorm = np.max(np.abs(g))
        trace.append((v.copy(), ev.log_density, gnorm))
        if gnorm < opts.gtol:
            return PenaltyMode(v, ev.hessian, ev.gradient, ev.log_density, it - 1, state,
                               clamped, trace)
        free = ~active
        negH = -ev.hessian[np.ix_(free, free)]
        step = np.zeros(q)
        try:
            np.linalg.cholesky(negH)
            step[free] = np.linalg.solve(negH, g[free])
        except np.linalg.LinAlgError:
            step = g / max(1.0, gnorm)
        if np.dot(step, g) < 0:
            step = g / max(1.0, gnorm)
        big = np.max(np.abs(step))
        if big > opts.max_step:
            step *= opts.max_step / big

        t = 1.0
        floor = ev.log_density - 1e-10 * max(1.0, abs(ev.log_density))
        for _ in range(opts.max_halvings):
            trial = np.clip(v + t * step, -opts.bound, opts.bound)
            try:
                if state.log_density(trial) >= floor:
                    break
            except NumericalError:
                pass
            t *= 0.5
        v_new = np.clip(v + t * step, -opts.bound, opts.bound)
        hit = np.flatnonzero(np.abs(v + t * step) > opts.bound)
        if hit.size:
            clamped.append((it, hit.tolist()))
        moved = np.max(np.abs(v_new - v))
        v = v_new
        state = state.reanchor(v)
        if moved < opts.xtol:
            ev = state.evaluate(v)
            return PenaltyMode(v, ev.hessian, ev.gradient, ev.log_density, it, state,
                               clamped, trace)
    raise ModeSearchError(f"penalty mode search did not converge in {opts.max_iter} iterations",
                          trace)
