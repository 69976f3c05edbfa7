"""Model, prior, data and draw containers plus deterministic constructions.

Everything downstream (the Gibbs sampler, the marginal likelihood
estimator, the forecaster) consumes the types defined here.  All
containers are frozen after construction and safe to share across
threads.

Conventions
-----------
* ``B`` is the ``k x (1 + k*p)`` coefficient matrix ``(c, B_1, ..., B_p)``
  acting on ``x_t = (1, y_{t-1}', ..., y_{t-p}')'``.
* ``vec(B)`` stacks the columns of ``B`` (``B.flatten(order="F")``), so the
  conjugate posterior precision takes the form ``sum_t x_t x_t' (x) Sigma_t^-1``.
* ``A`` is unit lower triangular; ``a`` collects its strict lower triangle
  row by row: ``(a_21, a_31, a_32, ..., a_k,k-1)``.
* Log-volatility paths are stored in logs; ``h_it = exp(logh[t, i])`` is a
  variance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class InsufficientDataError(ValueError):
    """Raised when the sample is too short for the requested lag order."""


class ErrorFamily(str, Enum):
    """The seven error distributions for the VAR innovations."""

    GAUSSIAN = "gaussian"
    STUDENT_T = "student-t"
    SKEW_T = "skew-t"
    OT = "ot"
    OST = "ost"
    MT = "mt"
    MST = "mst"

    @property
    def has_mixing(self) -> bool:
        """Whether the family carries latent inverse-gamma mixing variables."""
        return self is not ErrorFamily.GAUSSIAN

    @property
    def has_skew(self) -> bool:
        """Whether the family carries skewness parameters."""
        return self in (ErrorFamily.SKEW_T, ErrorFamily.OST, ErrorFamily.MST)

    @property
    def shared_mixing(self) -> bool:
        """One mixing variable per period shared by all equations."""
        return self in (ErrorFamily.STUDENT_T, ErrorFamily.SKEW_T)

    @property
    def orthogonal(self) -> bool:
        """Skew/tails act on the orthogonalized shocks A u_t, not on u_t."""
        return self in (ErrorFamily.OT, ErrorFamily.OST)


FAMILIES = tuple(ErrorFamily)


@dataclass(frozen=True)
class Dataset:
    """Observed (already transformed) multivariate monthly time series."""

    names: tuple[str, ...]
    dates: tuple[str, ...]
    values: np.ndarray  # T x k
    transforms: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("values must be a T x k matrix")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains missing or non-finite values")
        if len(self.dates) != values.shape[0]:
            raise ValueError("dates and values disagree on T")
        if len(self.names) != values.shape[1]:
            raise ValueError("names and values disagree on k")
        if list(self.dates) != sorted(set(self.dates)):
            raise ValueError("dates must be strictly increasing")
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """Error family, stochastic volatility switch and dimensions."""

    family: ErrorFamily
    sv: bool
    p: int
    k: int

    def __post_init__(self):
        object.__setattr__(self, "family", ErrorFamily(self.family))
        if self.p < 0:
            raise ValueError("lag order p must be >= 0 (0 = intercept only)")
        if self.k < 1:
            raise ValueError("dimension k must be >= 1")

    @property
    def n_mix(self) -> int:
        """Number of mixing-variable columns (1 if shared, k otherwise)."""
        return 1 if self.family.shared_mixing else self.k

    @property
    def n_coef(self) -> int:
        return 1 + self.k * self.p

    @property
    def n_a(self) -> int:
        return self.k * (self.k - 1) // 2

    @property
    def label(self) -> str:
        base = {
            ErrorFamily.GAUSSIAN: "Gaussian",
            ErrorFamily.STUDENT_T: "Student-t",
            ErrorFamily.SKEW_T: "Skew-t",
            ErrorFamily.OT: "OT",
            ErrorFamily.OST: "OST",
            ErrorFamily.MT: "MT",
            ErrorFamily.MST: "MST",
        }[self.family]
        return base + ("-SV" if self.sv else "")


@dataclass(frozen=True)
class PriorSpec:
    """All prior hyperparameters.

    ``b0``/``Vb0`` are normally produced by :func:`minnesota_moments`; they
    can also be set directly (e.g. for simulation studies where a prior
    that does not depend on the data is required).
    """

    b0: np.ndarray  # prior mean of vec(B), column-major
    Vb0: np.ndarray  # diagonal of the prior covariance of vec(B)
    l1: float = 0.2  # overall shrinkage
    l2: float = 0.5  # cross-variable shrinkage
    Va: float = 10.0  # prior variance multiplier for a
    nu_shape: float = 2.0  # Gamma prior on each nu_i
    nu_rate: float = 0.1
    Vgamma: float = 1.0  # prior variance of each gamma_i
    Vsigma: float = 1.0  # +/- sqrt(sigma2) ~ N(0, Vsigma)
    h0_mean: np.ndarray = field(default=None)  # prior mean of log h_i0
    h0_var: float = 4.0

    def __post_init__(self):
        b0 = np.asarray(self.b0, dtype=float).ravel()
        Vb0 = np.asarray(self.Vb0, dtype=float).ravel()
        if b0.shape != Vb0.shape:
            raise ValueError("b0 and Vb0 must have the same length")
        if np.any(Vb0 <= 0):
            raise ValueError("prior variances must be strictly positive")
        for name in ("l1", "l2", "Va", "nu_shape", "nu_rate", "Vgamma", "Vsigma", "h0_var"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        h0_mean = self.h0_mean
        if h0_mean is not None:
            h0_mean = np.asarray(h0_mean, dtype=float).ravel()
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "Vb0", Vb0)
        object.__setattr__(self, "h0_mean", h0_mean)

    def h0_mean_for(self, k: int) -> np.ndarray:
        if self.h0_mean is None:
            return np.zeros(k)
        if self.h0_mean.size == 1:
            return np.full(k, float(self.h0_mean[0]))
        if self.h0_mean.size != k:
            raise ValueError("h0_mean length does not match k")
        return self.h0_mean


@dataclass(frozen=True)
class ParameterDraw:
    """One draw of the static parameters theta_1."""

    B: np.ndarray  # k x (1 + k p)
    a: np.ndarray  # k(k-1)/2 strict lower triangle of A, row-major
    gamma: np.ndarray  # k skewness
    nu: np.ndarray  # k (or length-1 for shared-mixing families)
    sigma2: np.ndarray  # k volatility-of-volatility variances
    logh0: np.ndarray  # k initial log-volatilities

    def __post_init__(self):
        for name in ("B", "a", "gamma", "nu", "sigma2", "logh0"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.nu <= 2):
            raise ValueError("degrees of freedom must exceed 2")
        if np.any(self.sigma2 < 0):
            raise ValueError("sigma2 must be non-negative")

    @property
    def A(self) -> np.ndarray:
        k = self.B.shape[0]
        return a_to_matrix(self.a, k)


@dataclass(frozen=True)
class LatentPaths:
    """One draw of the latent states theta_2: mixing variables and volatilities."""

    xi: np.ndarray  # T x n_mix, positive
    logh: np.ndarray  # T x k

    def __post_init__(self):
        xi = np.asarray(self.xi, dtype=float)
        logh = np.asarray(self.logh, dtype=float)
        if xi.ndim != 2 or logh.ndim != 2:
            raise ValueError("latent paths must be T x k matrices")
        if np.any(xi <= 0):
            raise ValueError("mixing variables must be strictly positive")
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "logh", logh)


def a_to_matrix(a: np.ndarray, k: int) -> np.ndarray:
    """Rebuild the unit lower triangular A from its strict lower triangle."""
    A = np.eye(k)
    if k > 1:
        rows, cols = np.tril_indices(k, -1)
        A[rows, cols] = np.asarray(a, dtype=float).ravel()
    return A


def matrix_to_a(A: np.ndarray) -> np.ndarray:
    """Extract the strict lower triangle of A, row by row."""
    A = np.asarray(A, dtype=float)
    k = A.shape[0]
    rows, cols = np.tril_indices(k, -1)
    return A[rows, cols].copy()


def build_design(data: Dataset, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Build the regression pair (Y, X) with x_t = (1, y_{t-1}', ..., y_{t-p}')'.

    Row t of ``X`` holds the intercept and the p most recent lags of row t
    of ``Y``; the first p observations are used only as conditioning lags.
    """
    values = data.values
    T, k = values.shape
    if T <= p:
        raise InsufficientDataError(f"need more than p={p} observations, got T={T}")
    Y = values[p:]
    n = T - p
    X = np.empty((n, 1 + k * p))
    X[:, 0] = 1.0
    for lag in range(1, p + 1):
        X[:, 1 + (lag - 1) * k : 1 + lag * k] = values[p - lag : T - lag]
    return Y, X


def ar_ols_residual_variances(data: Dataset, p: int) -> np.ndarray:
    """Residual variance of a univariate AR(p) fit with intercept, per series.

    Falls back to the sample variance of the differenced series when the
    OLS system is singular.
    """
    values = data.values
    T, k = values.shape
    out = np.empty(k)
    for i in range(k):
        y = values[p:, i]
        Z = np.column_stack(
            [np.ones(T - p)] + [values[p - lag : T - lag, i] for lag in range(1, p + 1)]
        )
        try:
            coef, _, rank, _ = np.linalg.lstsq(Z, y, rcond=None)
            if rank < Z.shape[1]:
                raise np.linalg.LinAlgError("rank deficient AR design")
            resid = y - Z @ coef
            dof = max(len(y) - Z.shape[1], 1)
            out[i] = resid @ resid / dof
        except np.linalg.LinAlgError:
            warnings.warn(
                f"singular AR({p}) fit for series {data.names[i]!r}; "
                "using the variance of the differenced series",
                RuntimeWarning,
                stacklevel=2,
            )
            out[i] = np.var(np.diff(values[:, i]), ddof=1)
        if out[i] <= 0:
            out[i] = 1e-8
    return out


def minnesota_moments(spec: ModelSpec, prior: PriorSpec, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Minnesota prior mean and (diagonal) variance for vec(B).

    Shrinks each equation towards a univariate random walk: prior mean 1
    on the own first lag and 0 elsewhere.  Own-lag variance decays as
    ``l1^2 / l^2``; cross-variable terms are further shrunk by ``l2^2``
    and scaled by the ratio of AR(p) OLS residual variances; the
    intercept prior is loose at ``100 * s2_i``.
    """
    k, p = spec.k, spec.p
    s2 = ar_ols_residual_variances(data, p)
    n_coef = 1 + k * p
    b0 = np.zeros((k, n_coef))
    V = np.empty((k, n_coef))
    V[:, 0] = 100.0 * s2
    for lag in range(1, p + 1):
        for j in range(k):
            col = 1 + (lag - 1) * k + j
            for i in range(k):
                if i == j:
                    V[i, col] = prior.l1**2 / lag**2
                else:
                    V[i, col] = (prior.l1**2 * prior.l2**2 / lag**2) * (s2[i] / s2[j])
    if p >= 1:
        for i in range(k):
            b0[i, 1 + i] = 1.0  # own first lag
    return b0.flatten(order="F"), V.flatten(order="F")


def default_prior(spec: ModelSpec, data: Dataset) -> PriorSpec:
    """Minnesota prior moments plus AR(p)-based initial-volatility means."""
    base = PriorSpec(b0=np.zeros(spec.k * spec.n_coef), Vb0=np.ones(spec.k * spec.n_coef))
    b0, Vb0 = minnesota_moments(spec, base, data)
    s2 = ar_ols_residual_variances(data, spec.p)
    return PriorSpec(b0=b0, Vb0=Vb0, h0_mean=np.log(s2))
