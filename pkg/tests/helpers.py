"""Shared test machinery: prior samplers, fixed-noise rng stubs and
independent quadrature oracles for the conditional updates."""

from __future__ import annotations

import numpy as np

from skewvar.datamodel import (
    ErrorFamily,
    ModelSpec,
    ParameterDraw,
    PriorSpec,
)


class FixedNormalRng:
    """Stands in for a Generator but returns preset standard-normal values.

    With zeros, a conjugate Gaussian update returns its exact conditional
    mean; with a unit vector it returns mean + (scale factor), which
    recovers the conditional covariance column by column without Monte
    Carlo noise.
    """

    def __init__(self, values=None):
        self.values = values  # None -> zeros

    def standard_normal(self, size=None):
        if size is None:
            size = ()
        out = np.zeros(size)
        if self.values is not None:
            flat = np.asarray(self.values, dtype=float).ravel()
            out = flat[: int(np.prod(size or 1))].reshape(size)
        return out

    def random(self, size=None):
        # never used by the conjugate steps under test
        raise AssertionError("unexpected uniform draw")


def prior_draw(spec: ModelSpec, prior: PriorSpec, rng: np.random.Generator) -> ParameterDraw:
    """Exact draw of theta_1 from the prior (nu truncated to > 2)."""
    k = spec.k
    B = (prior.b0 + np.sqrt(prior.Vb0) * rng.standard_normal(prior.b0.size)).reshape(
        k, spec.n_coef, order="F"
    )
    a = np.sqrt(prior.Va) * rng.standard_normal(spec.n_a)
    gamma = (
        np.sqrt(prior.Vgamma) * rng.standard_normal(k)
        if spec.family.has_skew
        else np.zeros(k)
    )
    if spec.family.has_mixing:
        nu = np.empty(spec.n_mix)
        for j in range(spec.n_mix):
            v = 0.0
            while v <= 2.0:
                v = rng.gamma(prior.nu_shape, 1.0 / prior.nu_rate)
            nu[j] = v
    else:
        nu = np.full(spec.n_mix, 1e6)
    sigma2 = (
        (np.sqrt(prior.Vsigma) * rng.standard_normal(k)) ** 2 if spec.sv else np.zeros(k)
    )
    logh0 = prior.h0_mean_for(k) + np.sqrt(prior.h0_var) * rng.standard_normal(k)
    return ParameterDraw(B=B, a=a, gamma=gamma, nu=nu, sigma2=sigma2, logh0=logh0)


def theta1_vec(p: ParameterDraw, spec: ModelSpec) -> np.ndarray:
    """Flatten the blocks of theta_1 the family actually uses."""
    parts = [p.B.flatten(order="F"), p.a]
    if spec.family.has_skew:
        parts.append(p.gamma)
    if spec.family.has_mixing:
        parts.append(p.nu)
    if spec.sv:
        parts.append(p.sigma2)
    parts.append(p.logh0)
    return np.concatenate(parts)


def theta1_names(spec: ModelSpec) -> list:
    nb = spec.k * spec.n_coef
    names = [f"B{i}" for i in range(nb)] + [f"a{i}" for i in range(spec.n_a)]
    if spec.family.has_skew:
        names += [f"g{i}" for i in range(spec.k)]
    if spec.family.has_mixing:
        names += [f"nu{j}" for j in range(spec.n_mix)]
    if spec.sv:
        names += [f"s{i}" for i in range(spec.k)]
    names += [f"h0{i}" for i in range(spec.k)]
    return names


def build_X(y: np.ndarray, lags0: np.ndarray, p: int) -> np.ndarray:
    """Design matrix when the pre-sample lags are held fixed at lags0."""
    k = y.shape[1]
    full = np.vstack([lags0, y])
    n = y.shape[0]
    X = np.empty((n, 1 + k * p))
    X[:, 0] = 1.0
    for lag in range(1, p + 1):
        X[:, 1 + (lag - 1) * k : 1 + lag * k] = full[p - lag : p - lag + n]
    return X


def conditional_loglik(spec, params, xi, logh, Y, X):
    """log p(y | theta_1, xi, h) computed directly from the generative form.

    Independent of any sampler rearrangement: the conditional of y_t is
    Gaussian with mean B x_t + offset_t and covariance built family by
    family from the mixing and volatility states.
    """
    k = spec.k
    A = params.A
    A_inv = np.linalg.inv(A)
    n = Y.shape[0]
    if spec.family is ErrorFamily.GAUSSIAN:
        Wk = np.ones((n, k))
    elif spec.family.shared_mixing:
        Wk = np.repeat(xi, k, axis=1)
    else:
        Wk = xi
    H = np.exp(logh)
    out = 0.0
    for t in range(n):
        if spec.family.orthogonal or spec.family is ErrorFamily.GAUSSIAN:
            cov = A_inv @ np.diag(Wk[t] * H[t]) @ A_inv.T
            off = A_inv @ (Wk[t] * params.gamma) if spec.family.has_skew else 0.0
        else:
            cov = np.diag(np.sqrt(Wk[t])) @ A_inv @ np.diag(H[t]) @ A_inv.T @ np.diag(
                np.sqrt(Wk[t])
            )
            off = Wk[t] * params.gamma if spec.family.has_skew else 0.0
        dev = Y[t] - X[t] @ params.B.T - off
        sign, logdet = np.linalg.slogdet(cov)
        assert sign > 0
        out += (
            -0.5 * k * np.log(2 * np.pi)
            - 0.5 * logdet
            - 0.5 * dev @ np.linalg.solve(cov, dev)
        )
    return float(out)


def family_cov_offset(spec, params, xi, logh):
    """Per-period conditional covariance and mean offset of y_t, from scratch.

    Returns (cov (n, k, k), offset (n, k)) built directly from the
    stochastic representation; used by the quadrature oracles, where only
    the conditional mean varies over the grid.
    """
    k = spec.k
    A_inv = np.linalg.inv(params.A)
    n = logh.shape[0]
    if spec.family is ErrorFamily.GAUSSIAN:
        Wk = np.ones((n, k))
    elif spec.family.shared_mixing:
        Wk = np.repeat(xi, k, axis=1)
    else:
        Wk = xi
    H = np.exp(logh)
    cov = np.empty((n, k, k))
    off = np.zeros((n, k))
    for t in range(n):
        if spec.family.orthogonal or spec.family is ErrorFamily.GAUSSIAN:
            cov[t] = A_inv @ np.diag(Wk[t] * H[t]) @ A_inv.T
            if spec.family.has_skew:
                off[t] = A_inv @ (Wk[t] * params.gamma)
        else:
            sw = np.sqrt(Wk[t])
            cov[t] = sw[:, None] * (A_inv @ np.diag(H[t]) @ A_inv.T) * sw[None, :]
            if spec.family.has_skew:
                off[t] = Wk[t] * params.gamma
    return cov, off


def grid_moments_1d(grid, logpost):
    """Normalized mean/sd over a dense 1-D grid by trapezoid quadrature."""
    w = np.exp(logpost - logpost.max())
    z = np.trapezoid(w, grid)
    mean = np.trapezoid(grid * w, grid) / z
    var = np.trapezoid((grid - mean) ** 2 * w, grid) / z
    return float(mean), float(np.sqrt(var))


def grid_moments_2d(g1, g2, logpost):
    """Mean vector and covariance over a dense 2-D grid (logpost indexed [i, j])."""
    w = np.exp(logpost - logpost.max())
    z = np.trapezoid(np.trapezoid(w, g2, axis=1), g1)
    m1 = np.trapezoid(np.trapezoid(w * g1[:, None], g2, axis=1), g1) / z
    m2 = np.trapezoid(np.trapezoid(w * g2[None, :], g2, axis=1), g1) / z
    d1 = g1[:, None] - m1
    d2 = g2[None, :] - m2
    v11 = np.trapezoid(np.trapezoid(w * d1 * d1, g2, axis=1), g1) / z
    v22 = np.trapezoid(np.trapezoid(w * d2 * d2, g2, axis=1), g1) / z
    v12 = np.trapezoid(np.trapezoid(w * d1 * d2, g2, axis=1), g1) / z
    return np.array([m1, m2]), np.array([[v11, v12], [v12, v22]])
