"""Bayesian VARs with skewed, heavy-tailed errors and stochastic volatility.

The package estimates vector autoregressions whose reduced-form or
orthogonalized errors follow generalized hyperbolic skew Student's t
distributions, optionally with random-walk stochastic volatility.  It
provides a Metropolis-within-Gibbs sampler, marginal likelihood
estimation by adaptive importance sampling, and recursive out-of-sample
forecast evaluation (MSFE, Rao-Blackwellized log scores, CRPS, PITs,
Diebold-Mariano tests).
"""

from skewvar.datamodel import (
    Dataset,
    ErrorFamily,
    LatentPaths,
    ModelSpec,
    ParameterDraw,
    PriorSpec,
    a_to_matrix,
    build_design,
    matrix_to_a,
    minnesota_moments,
)

__all__ = [
    "Dataset",
    "ErrorFamily",
    "LatentPaths",
    "ModelSpec",
    "ParameterDraw",
    "PriorSpec",
    "a_to_matrix",
    "build_design",
    "matrix_to_a",
    "minnesota_moments",
]

__version__ = "0.1.0"
