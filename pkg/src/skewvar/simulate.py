"""Generation of synthetic data from every model variant.

The same one-period innovation kernel drives the Geweke validation
simulators, the recovery experiments and the predictive simulator, so the
generative equations live here in one place.
"""

from __future__ import annotations

import numpy as np

from skewvar.datamodel import (
    Dataset,
    ErrorFamily,
    LatentPaths,
    ModelSpec,
    ParameterDraw,
    a_to_matrix,
)
from skewvar.distributions import invgamma_sample


class UnstableCoefficientsError(ValueError):
    """The VAR companion matrix has a unit or explosive root."""


def companion_matrix(B: np.ndarray, k: int, p: int) -> np.ndarray:
    comp = np.zeros((k * p, k * p))
    comp[:k, :] = B[:, 1:]
    if p > 1:
        comp[k:, :-k] = np.eye(k * (p - 1))
    return comp


def spectral_radius(B: np.ndarray, k: int, p: int) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(companion_matrix(B, k, p)))))


def draw_mixing(spec: ModelSpec, nu: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh inverse-gamma mixing variables, n x n_mix (all ones for Gaussian)."""
    if not spec.family.has_mixing:
        return np.ones((n, 1))
    shape = np.broadcast_to(0.5 * nu, (n, spec.n_mix))
    return invgamma_sample(shape, shape, rng)


def simulate_logh(
    spec: ModelSpec, logh0: np.ndarray, sigma2: np.ndarray, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Random-walk log-volatility path of length n (flat without SV)."""
    if not spec.sv:
        return np.tile(logh0, (n, 1))
    steps = np.sqrt(sigma2) * rng.standard_normal((n, spec.k))
    return logh0 + np.cumsum(steps, axis=0)


def innovations(
    spec: ModelSpec,
    A_inv: np.ndarray,
    gamma: np.ndarray,
    xi: np.ndarray,
    logh: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Reduced-form errors u_t for n periods given the latents."""
    n = logh.shape[0]
    k = spec.k
    eps = rng.standard_normal((n, k))
    scaled = np.sqrt(np.exp(logh)) * eps  # H^{1/2} eps
    if spec.family is ErrorFamily.GAUSSIAN:
        return scaled @ A_inv.T
    Wk = np.repeat(xi, k, axis=1) if spec.family.shared_mixing else xi
    if spec.family.orthogonal:
        inner = np.sqrt(Wk) * scaled
        if spec.family.has_skew:
            inner = inner + Wk * gamma
        return inner @ A_inv.T
    u = np.sqrt(Wk) * (scaled @ A_inv.T)
    if spec.family.has_skew:
        u = u + Wk * gamma
    return u


def simulate_conditional(
    spec: ModelSpec,
    params: ParameterDraw,
    latents: LatentPaths,
    lags0: np.ndarray,
    rng: np.random.Generator,
) -> np.ndarray:
    """Simulate y_{1:n} given parameters, latent paths and fixed pre-sample lags.

    ``lags0`` is p x k, oldest row first.  This is exactly the conditional
    data density the Gibbs sampler targets, which the joint-distribution
    validation relies on.
    """
    n = latents.logh.shape[0]
    k, p = spec.k, spec.p
    A_inv = np.linalg.inv(a_to_matrix(params.a, k))
    u = innovations(spec, A_inv, params.gamma, latents.xi, latents.logh, rng)
    hist = list(np.asarray(lags0, dtype=float))
    out = np.empty((n, k))
    for t in range(n):
        x = np.concatenate([[1.0], np.concatenate([hist[-lag] for lag in range(1, p + 1)])])
        out[t] = params.B @ x + u[t]
        hist.append(out[t])
    return out


def simulate_latents(
    spec: ModelSpec, params: ParameterDraw, n: int, rng: np.random.Generator
) -> LatentPaths:
    xi = draw_mixing(spec, params.nu, n, rng)
    logh = simulate_logh(spec, params.logh0, params.sigma2, n, rng)
    return LatentPaths(xi=xi, logh=logh)


def _monthly_dates(n: int, start_year: int = 2000) -> tuple[str, ...]:
    return tuple(
        f"{start_year + idx // 12:04d}-{idx % 12 + 1:02d}" for idx in range(n)
    )


def simulate_dataset(
    spec: ModelSpec,
    true_params: ParameterDraw,
    T: int,
    seed: int,
    warmup: int = 100,
    allow_unstable: bool = False,
    names: tuple[str, ...] = None,
) -> tuple[Dataset, LatentPaths]:
    """Simulate a dataset of length T from the family's stochastic representation.

    The returned latent paths cover the modeled periods t = p+1 ... T
    (the first p rows act as conditioning lags only).
    """
    rho = spectral_radius(true_params.B, spec.k, spec.p)
    if rho >= 1.0 and not allow_unstable:
        raise UnstableCoefficientsError(
            f"companion spectral radius {rho:.3f} >= 1; pass allow_unstable to override"
        )
    rng = np.random.default_rng(seed)
    total = warmup + T
    latents = simulate_latents(spec, true_params, total, rng)
    y = simulate_conditional(
        spec, true_params, latents, np.zeros((spec.p, spec.k)), rng
    )
    values = y[warmup:]
    kept = LatentPaths(
        xi=latents.xi[warmup + spec.p :], logh=latents.logh[warmup + spec.p :]
    )
    names = names or tuple(f"y{i + 1}" for i in range(spec.k))
    data = Dataset(
        names=names,
        dates=_monthly_dates(T),
        values=values,
        transforms=tuple("level" for _ in range(spec.k)),
    )
    return data, kept
