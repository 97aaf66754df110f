"""One-parameter exponential-family responses with canonical links.

A response ``y`` has log-density ``(y * gamma - s(gamma)) / dispersion + c(y)``.
The normalising term ``c`` is never evaluated: every quantity downstream is
used up to an additive constant or as a ratio, so log-likelihood values
returned here are "up to a family constant".
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit

MEAN_EPS = 1e-10


class FamilyKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    POISSON = "poisson"
    BINOMIAL = "binomial"
    BERNOULLI = "bernoulli"


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a family function."""


def _check_finite(gamma):
    gamma = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(gamma)):
        raise DomainError("natural parameter must be finite")
    return gamma


@dataclass(frozen=True)
class ResponseFamily:
    """Exponential-family response with its canonical link.

    Parameters
    ----------
    kind : FamilyKind or str
        One of ``gaussian``, ``poisson``, ``binomial``, ``bernoulli``.
    dispersion : float
        Known dispersion. Must be 1 for the discrete families; the Gaussian
        variance otherwise.
    trials : int or array_like
        Number of trials per observation (binomial only).
    """

    kind: FamilyKind
    dispersion: float = 1.0
    trials: object = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", FamilyKind(self.kind))
        if not np.isfinite(self.dispersion) or self.dispersion <= 0:
            raise ValueError(f"dispersion must be positive, got {self.dispersion}")
        trials = np.asarray(self.trials)
        if self.kind is FamilyKind.BERNOULLI and np.any(trials != 1):
            raise ValueError("bernoulli family requires trials == 1")
        if self.kind in (FamilyKind.BINOMIAL, FamilyKind.BERNOULLI):
            if np.any(trials < 1) or np.any(trials != np.round(trials)):
                raise ValueError("trials must be positive integers")
            if self.dispersion != 1.0:
                raise ValueError("binomial dispersion is fixed at 1")
        if self.kind is FamilyKind.POISSON and self.dispersion != 1.0:
            raise ValueError("poisson dispersion is fixed at 1")

    @classmethod
    def gaussian(cls, variance: float) -> "ResponseFamily":
        return cls(FamilyKind.GAUSSIAN, dispersion=variance)

    @classmethod
    def poisson(cls) -> "ResponseFamily":
        return cls(FamilyKind.POISSON)

    @classmethod
    def binomial(cls, trials=1) -> "ResponseFamily":
        return cls(FamilyKind.BINOMIAL, trials=trials)

    @classmethod
    def bernoulli(cls) -> "ResponseFamily":
        return cls(FamilyKind.BERNOULLI)

    @property
    def _n(self):
        return np.asarray(self.trials, dtype=float)

    @property
    def _is_binary(self):
        return self.kind in (FamilyKind.BINOMIAL, FamilyKind.BERNOULLI)

    # cumulant function and derivatives -----------------------------------

    def s(self, gamma):
        gamma = _check_finite(gamma)
        if self.kind is FamilyKind.GAUSSIAN:
            return 0.5 * gamma**2
        if self.kind is FamilyKind.POISSON:
            return np.exp(gamma)
        return self._n * np.logaddexp(0.0, gamma)

    def ds(self, gamma):
        gamma = _check_finite(gamma)
        if self.kind is FamilyKind.GAUSSIAN:
            return gamma.copy()
        if self.kind is FamilyKind.POISSON:
            return np.exp(gamma)
        return self._n * expit(gamma)

    def d2s(self, gamma):
        gamma = _check_finite(gamma)
        if self.kind is FamilyKind.GAUSSIAN:
            return np.ones_like(gamma)
        if self.kind is FamilyKind.POISSON:
            return np.exp(gamma)
        p = expit(gamma)
        return self._n * p * (1.0 - p)

    # mean / link ---------------------------------------------------------

    def mean(self, gamma):
        return self.ds(gamma)

    def variance(self, mu):
        """Var(y) as a function of the mean."""
        mu = np.asarray(mu, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return np.full_like(mu, self.dispersion)
        if self.kind is FamilyKind.POISSON:
            return mu
        p = mu / self._n
        return self._n * p * (1.0 - p)

    def link(self, mu):
        """Canonical link g(mu)."""
        mu = np.asarray(mu, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return mu.copy()
        mu, _ = self.clamp_mean(mu)
        if self.kind is FamilyKind.POISSON:
            return np.log(mu)
        return logit(mu / self._n)

    def link_deriv(self, mu):
        mu = np.asarray(mu, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return np.ones_like(mu)
        if self.kind is FamilyKind.POISSON:
            return 1.0 / mu
        p = mu / self._n
        return 1.0 / (self._n * p * (1.0 - p))

    def clamp_mean(self, mu):
        """Clamp means off the boundary; returns ``(mu, n_clamped)``."""
        mu = np.asarray(mu, dtype=float)
        if self.kind is FamilyKind.GAUSSIAN:
            return mu, 0
        if self.kind is FamilyKind.POISSON:
            out = np.maximum(mu, MEAN_EPS)
        else:
            n = self._n
            out = n * np.clip(mu / n, MEAN_EPS, 1.0 - MEAN_EPS)
        return out, int(np.count_nonzero(out != mu))

    def working_weights(self, mu):
        """IRLS weights ``1 / (Var(y) g'(mu)^2)`` after boundary clamping."""
        mu, _ = self.clamp_mean(mu)
        var = self.variance(mu)
        return 1.0 / (var * self.link_deriv(mu) ** 2)

    def check_response(self, y) -> np.ndarray:
        """Validate responses against the family's support."""
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DomainError("responses must be finite")
        if self.kind is FamilyKind.GAUSSIAN:
            return y
        bad = (y < 0) | (y != np.round(y))
        if self._is_binary:
            bad |= y > self._n
        if np.any(bad):
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(f"y[{i}]={y[i]!r} outside the support of the {self.kind.value} family")
        return y

    def loglik(self, y, gamma):
        """Log-likelihood up to the family constant."""
        gamma = np.asarray(gamma, dtype=float)
        return float(np.sum(np.asarray(y) * gamma - self.s(gamma)) / self.dispersion)


def cumulant(family: ResponseFamily, gamma):
    return family.s(gamma)


def cumulant_d1(family: ResponseFamily, gamma):
    return family.ds(gamma)


def cumulant_d2(family: ResponseFamily, gamma):
    return family.d2s(gamma)


def working_weights(family: ResponseFamily, mu):
    return family.working_weights(mu)


def make_family(name: str, dispersion: float | None = None, trials=1) -> ResponseFamily:
    """Build a family from its string name (used by the config loader)."""
    kind = FamilyKind(name.lower())
    if kind is FamilyKind.GAUSSIAN:
        if dispersion is None:
            raise ValueError("gaussian family needs a dispersion (variance)")
        return ResponseFamily.gaussian(dispersion)
    if kind is FamilyKind.BINOMIAL:
        return ResponseFamily.binomial(trials)
    return ResponseFamily(kind)
