"""Laplace-P-spline inference for generalized additive models.

Set ``LPSGAM_NUM_THREADS`` before importing to cap the BLAS/OpenMP thread
count used by the linear algebra backend.
"""

import os as _os

_threads = _os.environ.get("LPSGAM_NUM_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _threads)

from .design import GamDesign, SplineBasisSpec, assemble_design, bspline_basis, penalty_block  # noqa: E402
from .explorer import ExplorerOptions, PenaltyEnsemble, explore  # noqa: E402
from .families import ResponseFamily  # noqa: E402
from .hyperposterior import PenaltyHyperPrior, PenaltyPosterior, find_mode_v  # noqa: E402
from .inference import (FitOptions, GamFit, coef_credible_interval, fit_lps, fit_lpsmap,  # noqa: E402
                        smooth_estimate)
from .laplace import fit_conditional, fit_conditional_fixed_weights  # noqa: E402

__all__ = [
    "GamDesign", "SplineBasisSpec", "assemble_design", "bspline_basis", "penalty_block",
    "ExplorerOptions", "PenaltyEnsemble", "explore", "ResponseFamily", "PenaltyHyperPrior",
    "PenaltyPosterior", "find_mode_v", "FitOptions", "GamFit", "coef_credible_interval",
    "fit_lps", "fit_lpsmap", "smooth_estimate", "fit_conditional",
    "fit_conditional_fixed_weights",
]
