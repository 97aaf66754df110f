"""Laplace approximation of the latent-field posterior for a fixed log-penalty."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .design import GamDesign, prior_precision
from .families import FamilyKind, ResponseFamily


class NumericalError(ArithmeticError):
    """A matrix that should be positive definite failed to factorize."""

    def __init__(self, message, v=None):
        super().__init__(message if v is None else f"{message} (v={np.asarray(v).tolist()})")
        self.v = v


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-8
    max_iter: int = 50
    max_halvings: int = 10


@dataclass
class ConditionalLaplaceFit:
    """Gaussian approximation N(xi_hat, Sigma_hat) of p(xi | v, D)."""

    v: np.ndarray
    xi_hat: np.ndarray
    Sigma_hat: np.ndarray
    W_tilde: np.ndarray
    varpi_tilde: np.ndarray
    iterations: int
    converged: bool
    n_clamped: int = 0
    objective_trace: tuple = ()


def chol(A, v=None):
    try:
        return cho_factor(A, lower=True, check_finite=False)
    except LinAlgError as exc:
        raise NumericalError("matrix B'WB + Q is not positive definite", v) from exc


def inverse_from_chol(cf) -> np.ndarray:
    M = cho_solve(cf, np.eye(cf[0].shape[0]), check_finite=False)
    return 0.5 * (M + M.T)


def penalized_objective(design, family, y, Q, xi) -> float:
    """Log-likelihood (up to constant) minus half the prior quadratic form."""
    eta = design.B @ xi
    return family.loglik(y, eta) - 0.5 * xi @ Q @ xi


def penalized_score(design, family, y, Q, xi) -> np.ndarray:
    eta = design.B @ xi
    return design.B.T @ (np.asarray(y) - family.mean(eta)) / family.dispersion - Q @ xi


def _working_quantities(design, family, y, xi):
    eta = design.B @ xi
    mu, n_clamped = family.clamp_mean(family.mean(eta))
    w = family.working_weights(mu)
    BtWB = design.B.T @ (w[:, None] * design.B)
    varpi = design.B.T @ (np.asarray(y) - mu) / family.dispersion + BtWB @ xi
    return w, BtWB, varpi, n_clamped


def initial_latent(design: GamDesign, family: ResponseFamily, y) -> np.ndarray:
    xi0 = np.zeros(design.dim)
    xi0[0] = float(family.link(np.atleast_1d(np.mean(y)))[0])
    return xi0


def fit_conditional(design: GamDesign, family: ResponseFamily, y, v, zeta: float = 1e-5,
                    opts: NewtonOptions | None = None, xi0=None) -> ConditionalLaplaceFit:
    """Newton-Raphson mode of ``p(xi | v, D)`` with step-halving.

    Iterates ``xi <- (B'W B + Q)^{-1} varpi`` where ``W`` and ``varpi`` are
    evaluated at the current iterate. The returned mode is the last solve, so
    ``xi_hat == Sigma_hat @ varpi_tilde`` holds exactly for the returned
    weights.
    """
    opts = opts or NewtonOptions()
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if not np.all(np.isfinite(v)):
        raise ValueError(f"log-penalty must be finite, got {v}")
    y = np.asarray(y, dtype=float)
    Q = prior_precision(design, v, zeta)
    xi = initial_latent(design, family, y) if xi0 is None else np.array(xi0, dtype=float)
    exact = family.kind is FamilyKind.GAUSSIAN

    obj = penalized_objective(design, family, y, Q, xi)
    converged = False
    it = 0
    trace = [obj]
    for it in range(1, opts.max_iter + 1):
        w, BtWB, varpi, n_clamped = _working_quantities(design, family, y, xi)
        cf = chol(BtWB + Q, v)
        target = cho_solve(cf, varpi, check_finite=False)
        if exact:
            xi_new, converged = target, True
            break
        step = target - xi
        xi_new = target
        new_obj = penalized_objective(design, family, y, Q, xi_new)
        for _ in range(opts.max_halvings):
            if new_obj >= obj - 1e-12 * abs(obj):
                break
            step = 0.5 * step
            xi_new = xi + step
            new_obj = penalized_objective(design, family, y, Q, xi_new)
        change = np.max(np.abs(xi_new - xi))
        if change < opts.tol and xi_new is target:
            converged = True
            break
        xi, obj = xi_new, new_obj
        trace.append(obj)

    if xi_new is not target:
        # final iterate came from a damped step; recompute so xi = M varpi exactly
        w, BtWB, varpi, n_clamped = _working_quantities(design, family, y, xi_new)
        cf = chol(BtWB + Q, v)
        xi_new = cho_solve(cf, varpi, check_finite=False)
    Sigma = inverse_from_chol(cf)
    return ConditionalLaplaceFit(v=v, xi_hat=xi_new, Sigma_hat=Sigma, W_tilde=w,
                                 varpi_tilde=varpi, iterations=it, converged=converged,
                                 n_clamped=n_clamped, objective_trace=tuple(trace))


def fit_conditional_fixed_weights(design: GamDesign, family: ResponseFamily, y, v, W_fixed,
                                  varpi_fixed, zeta: float = 1e-5,
                                  BtWB=None) -> ConditionalLaplaceFit:
    """Single linear solve ``(B'W B + Q_v)^{-1} varpi`` with frozen weights."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if BtWB is None:
        BtWB = design.B.T @ (np.asarray(W_fixed)[:, None] * design.B)
    cf = chol(BtWB + prior_precision(design, v, zeta), v)
    Sigma = inverse_from_chol(cf)
    xi = cho_solve(cf, varpi_fixed, check_finite=False)
    return ConditionalLaplaceFit(v=v, xi_hat=xi, Sigma_hat=Sigma, W_tilde=np.asarray(W_fixed),
                                 varpi_tilde=np.asarray(varpi_fixed), iterations=0,
                                 converged=True)
