"""P-spline bases, difference penalties and the assembled GAM design."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class DesignError(ValueError):
    """Configuration or data problem detected while building a design."""


@dataclass(frozen=True)
class SplineBasisSpec:
    """Cubic B-spline basis on an interval with an r-th order difference penalty."""

    K: int = 15
    domain_lo: float = -1.0
    domain_hi: float = 1.0
    penalty_order: int = 3
    epsilon: float = 1e-6
    grid_size: int = 100
    degree: int = 3

    def __post_init__(self):
        if self.K <= self.penalty_order:
            raise DesignError(f"K={self.K} must exceed the penalty order {self.penalty_order}")
        if self.K < self.degree + 1:
            raise DesignError(f"K={self.K} is too small for degree {self.degree}")
        if not self.domain_lo < self.domain_hi:
            raise DesignError(f"empty spline domain [{self.domain_lo}, {self.domain_hi}]")
        if self.epsilon <= 0:
            raise DesignError("epsilon must be positive")
        if self.penalty_order < 1:
            raise DesignError("penalty order must be >= 1")
        if self.grid_size < 2:
            raise DesignError("centering grid needs at least 2 points")

    def with_domain(self, lo: float, hi: float) -> "SplineBasisSpec":
        return SplineBasisSpec(self.K, lo, hi, self.penalty_order, self.epsilon,
                               self.grid_size, self.degree)

    def knots(self) -> np.ndarray:
        """Clamped knot vector with equidistant interior knots."""
        inner = np.linspace(self.domain_lo, self.domain_hi, self.K - self.degree + 1)
        d = self.degree
        return np.concatenate([np.repeat(inner[0], d), inner, np.repeat(inner[-1], d)])

    def fine_grid(self) -> np.ndarray:
        return np.linspace(self.domain_lo, self.domain_hi, self.grid_size)


def bspline_basis(x, spec: SplineBasisSpec) -> np.ndarray:
    """Evaluate the K B-splines of ``spec`` at ``x`` (Cox-de Boor recursion).

    Returns an ``(n, K)`` matrix whose rows sum to one on the domain.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lo, hi = spec.domain_lo, spec.domain_hi
    tol = 1e-12 * (hi - lo)
    bad = np.flatnonzero(~((x >= lo - tol) & (x <= hi + tol)))
    if bad.size:
        i = int(bad[0])
        raise DesignError(f"x[{i}]={x[i]!r} outside spline domain [{lo}, {hi}]")
    x = np.clip(x, lo, hi)

    t = spec.knots()
    d = spec.degree
    n_int = len(t) - 1
    # index of the knot span containing x; the right endpoint joins the last span
    span = np.searchsorted(t, x, side="right") - 1
    span = np.clip(span, d, len(t) - d - 2)

    # degree-0 indicators on the non-degenerate spans
    N = np.zeros((x.size, n_int))
    N[np.arange(x.size), span] = 1.0
    for k in range(1, d + 1):
        new = np.zeros((x.size, n_int - k))
        for i in range(n_int - k):
            left = t[i + k] - t[i]
            right = t[i + k + 1] - t[i + 1]
            term = 0.0
            if left > 0:
                term = (x - t[i]) / left * N[:, i]
            if right > 0:
                term = term + (t[i + k + 1] - x) / right * N[:, i + 1]
            new[:, i] = term
        N = new
    return N


def difference_matrix(K: int, r: int) -> np.ndarray:
    """The (K - r) x K matrix of r-th order differences."""
    return np.diff(np.eye(K), n=r, axis=0)


def penalty_block(K_eff: int, r: int, eps: float = 1e-6, drop_last: bool = False) -> np.ndarray:
    """Difference penalty ``D_r^T D_r + eps * I``.

    With ``drop_last`` the difference matrix is built on ``K_eff`` columns and
    its last column is deleted afterwards, giving a ``(K_eff-1)``-square block
    that matches a basis whose last coefficient is fixed at zero.
    """
    if K_eff <= r:
        raise DesignError(f"penalty needs K > r (got K={K_eff}, r={r})")
    D = difference_matrix(K_eff, r)
    if drop_last:
        D = D[:, :-1]
    return D.T @ D + eps * np.eye(D.shape[1])


@dataclass
class SmoothTerm:
    name: str
    spec: SplineBasisSpec
    Btilde: np.ndarray
    fine_basis: np.ndarray
    basis_mean: np.ndarray = field(repr=False)
    P: np.ndarray = field(repr=False)

    @property
    def n_coef(self) -> int:
        return self.spec.K - 1

    def basis(self, x) -> np.ndarray:
        """Centered, column-deleted basis at arbitrary points of the domain."""
        return bspline_basis(x, self.spec)[:, :-1] - self.basis_mean

    @property
    def grid(self) -> np.ndarray:
        return self.spec.fine_grid()


@dataclass
class GamDesign:
    """Assembled design ``B = [Z : B~_1 : ... : B~_q]`` and penalty blocks."""

    Z: np.ndarray
    smooths: list
    z_means: np.ndarray
    linear_names: list
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.B = np.hstack([self.Z] + [s.Btilde for s in self.smooths])

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1] - 1

    @property
    def q(self) -> int:
        return len(self.smooths)

    @property
    def dim(self) -> int:
        return self.B.shape[1]

    @property
    def Btilde(self) -> list:
        return [s.Btilde for s in self.smooths]

    @property
    def P(self) -> np.ndarray:
        """Penalty block of the first smooth (all blocks share it when K, r agree)."""
        return self.smooths[0].P

    @property
    def K(self) -> np.ndarray:
        return np.array([s.spec.K for s in self.smooths])

    def smooth_slices(self) -> list:
        out, start = [], self.p + 1
        for s in self.smooths:
            out.append(slice(start, start + s.n_coef))
            start += s.n_coef
        return out


def assemble_design(z, x, specs, linear_names=None, smooth_names=None) -> GamDesign:
    """Build the centered GAM design.

    Parameters
    ----------
    z : array_like, shape (n, p)
        Linear covariates (may have zero columns).
    x : array_like, shape (n, q)
        Smooth covariates.
    specs : SplineBasisSpec or sequence of them
        One spec per smooth, or a single spec reused for every column. A spec
        whose domain is ``None`` is not accepted; use ``data_domain_specs`` to
        derive domains from the data.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, q = x.shape
    z = np.zeros((n, 0)) if z is None else np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[0] != n:
        raise DesignError(f"z has {z.shape[0]} rows but x has {n}")
    if np.isnan(x).any() or np.isnan(z).any():
        raise DesignError("covariates contain missing values")
    if isinstance(specs, SplineBasisSpec):
        specs = [specs] * q
    if len(specs) != q:
        raise DesignError(f"{len(specs)} spline specs for {q} smooth covariates")
    smooth_names = smooth_names or [f"x{j + 1}" for j in range(q)]
    linear_names = linear_names or [f"z{l + 1}" for l in range(z.shape[1])]

    z_means = z.mean(axis=0)
    Z = np.hstack([np.ones((n, 1)), z - z_means])

    smooths = []
    for j, spec in enumerate(specs):
        col = x[:, j]
        if np.ptp(col) == 0:
            raise DesignError(f"smooth covariate {smooth_names[j]!r} is constant")
        fine = bspline_basis(spec.fine_grid(), spec)
        mean_row = fine.mean(axis=0)[:-1]
        Bj = bspline_basis(col, spec)[:, :-1] - mean_row
        P = penalty_block(spec.K, spec.penalty_order, spec.epsilon, drop_last=True)
        smooths.append(SmoothTerm(smooth_names[j], spec, Bj, fine[:, :-1] - mean_row,
                                  mean_row, P))

    design = GamDesign(Z, smooths, z_means, list(linear_names))
    if n < design.dim:
        warnings.warn(f"n={n} is smaller than the latent dimension {design.dim}", stacklevel=2)
    return design


def data_domain_specs(x, spec: SplineBasisSpec) -> list:
    """Per-column copies of ``spec`` with domains set to the data range."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return [spec.with_domain(float(c.min()), float(c.max())) for c in x.T]


def prior_precision(design: GamDesign, v, zeta: float = 1e-5) -> np.ndarray:
    """Block-diagonal prior precision ``diag(zeta I, e^{v_1} P_1, ..., e^{v_q} P_q)``."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.shape != (design.q,):
        raise ValueError(f"expected {design.q} log-penalties, got shape {v.shape}")
    Q = np.zeros((design.dim, design.dim))
    k = design.p + 1
    Q[:k, :k] = zeta * np.eye(k)
    for j, sl in enumerate(design.smooth_slices()):
        Q[sl, sl] = np.exp(v[j]) * design.smooths[j].P
    return Q
