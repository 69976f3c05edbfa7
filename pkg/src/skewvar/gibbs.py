"""Seven-step Metropolis-within-Gibbs sampler for all 14 model variants.

Per sweep the steps are: coefficients B, skewness gamma, triangularization
a, log-volatility paths (with auxiliary mixture indicators), variance of
volatility sigma^2, degrees of freedom nu, and mixing variables xi.  Steps
that do not apply to a family (e.g. gamma for symmetric families) are
skipped; their parameters stay at their degenerate values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from skewvar.datamodel import (
    Dataset,
    ErrorFamily,
    LatentPaths,
    ModelSpec,
    ParameterDraw,
    PriorSpec,
    a_to_matrix,
    build_design,
)
from skewvar.distributions import (
    LOG_CHI2_OFFSET,
    invgamma_logpdf,
    invgamma_sample,
    ksc_table,
)


class SamplerNumericalError(RuntimeError):
    """A conditional update produced a non-finite or non-PD quantity."""


@dataclass
class MhTuning:
    """Metropolis-Hastings tuning constants and adaptation state."""

    c_xi: float = 0.75
    target_accept_nu: float = 0.25
    c_nu: np.ndarray = None  # per mixing column, log step size
    adapt: bool = True

    def init_for(self, n_mix: int) -> None:
        if self.c_nu is None:
            self.c_nu = np.zeros(n_mix)


@dataclass
class ChainState:
    """Mutable state of one chain: parameters, latents, indicators, tuning."""

    B: np.ndarray
    a: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    sigma2: np.ndarray
    logh0: np.ndarray
    xi: np.ndarray  # n x n_mix
    logh: np.ndarray  # n x k
    mix_ind: np.ndarray  # n x k
    tuning: MhTuning
    accept: dict = field(default_factory=dict)

    def to_draw(self) -> ParameterDraw:
        return ParameterDraw(
            B=self.B.copy(),
            a=self.a.copy(),
            gamma=self.gamma.copy(),
            nu=self.nu.copy(),
            sigma2=self.sigma2.copy(),
            logh0=self.logh0.copy(),
        )

    def to_latents(self) -> LatentPaths:
        return LatentPaths(xi=self.xi.copy(), logh=self.logh.copy())


@dataclass
class PosteriorDraws:
    """Retained posterior sample, stacked per parameter block."""

    spec: ModelSpec
    B: np.ndarray  # R x k x n_coef
    a: np.ndarray  # R x n_a
    gamma: np.ndarray  # R x k
    nu: np.ndarray  # R x n_mix
    sigma2: np.ndarray  # R x k
    logh0: np.ndarray  # R x k
    xi: np.ndarray = None  # R x n x n_mix (optional)
    logh: np.ndarray = None  # R x n x k (optional)
    acceptance: dict = field(default_factory=dict)
    seed: int = None

    @property
    def n_draws(self) -> int:
        return self.B.shape[0]

    def draw(self, r: int) -> tuple[ParameterDraw, LatentPaths]:
        params = ParameterDraw(
            B=self.B[r], a=self.a[r], gamma=self.gamma[r],
            nu=self.nu[r], sigma2=self.sigma2[r], logh0=self.logh0[r],
        )
        if self.xi is None or self.logh is None:
            raise ValueError("latent paths were not retained")
        return params, LatentPaths(xi=self.xi[r], logh=self.logh[r])


def _expand_mix(spec: ModelSpec, xi: np.ndarray) -> np.ndarray:
    """n x k matrix of mixing values (columns repeated for shared mixing)."""
    if spec.family is ErrorFamily.GAUSSIAN:
        return np.ones((xi.shape[0], spec.k))
    if spec.family.shared_mixing:
        return np.repeat(xi, spec.k, axis=1)
    return xi


def _mean_offset(spec: ModelSpec, state: ChainState, A_inv: np.ndarray) -> np.ndarray:
    """Skew offset of u_t per family (zero when the family is symmetric)."""
    n = state.xi.shape[0]
    if not spec.family.has_skew:
        return np.zeros((n, spec.k))
    Wk = _expand_mix(spec, state.xi)
    if spec.family.orthogonal:
        return (Wk * state.gamma) @ A_inv.T
    return Wk * state.gamma


def _sigma_inv_factors(spec: ModelSpec, state: ChainState, A: np.ndarray) -> np.ndarray:
    """n x k x k factors M_t with Sigma_t^{-1} = M_t' M_t."""
    Wk = _expand_mix(spec, state.xi)
    H = np.exp(state.logh)
    if spec.family.orthogonal or spec.family is ErrorFamily.GAUSSIAN:
        return A[None, :, :] / np.sqrt(Wk * H)[:, :, None]
    return A[None, :, :] / np.sqrt(H)[:, :, None] / np.sqrt(Wk)[:, None, :]


def _orthogonal_std_residuals(
    spec: ModelSpec, state: ChainState, e: np.ndarray, A: np.ndarray
) -> np.ndarray:
    """zeta_it = sqrt(h_it) eps_it, the volatility-scale shocks per equation."""
    Wk = _expand_mix(spec, state.xi)
    if spec.family is ErrorFamily.GAUSSIAN:
        return e @ A.T
    if spec.family.orthogonal:
        z = e @ A.T
        if spec.family.has_skew:
            z = z - Wk * state.gamma
        return z / np.sqrt(Wk)
    v = e.copy()
    if spec.family.has_skew:
        v = v - Wk * state.gamma
    return (v / np.sqrt(Wk)) @ A.T


def draw_B(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    Y: np.ndarray, X: np.ndarray, rng: np.random.Generator,
) -> None:
    """Step 1: conjugate Gaussian update of vec(B)."""
    k, nb = spec.k, spec.k * spec.n_coef
    Vb0_inv = 1.0 / prior.Vb0
    prec = np.diag(Vb0_inv)
    rhs = Vb0_inv * prior.b0
    n = Y.shape[0]
    if n > 0:
        A = a_to_matrix(state.a, k)
        A_inv = np.linalg.inv(A)
        M = _sigma_inv_factors(spec, state, A)
        S = np.einsum("tli,tlj->tij", M, M)  # Sigma_t^{-1}
        ytil = Y - _mean_offset(spec, state, A_inv)
        prec = prec + np.einsum("tc,td,tij->cidj", X, X, S).reshape(nb, nb)
        rhs = rhs + np.einsum("tc,tij,tj->ci", X, S, ytil).reshape(nb)
    try:
        L = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise SamplerNumericalError(
            f"posterior precision of vec(B) not positive definite (k={k})"
        ) from exc
    mean = np.linalg.solve(prec, rhs)
    z = rng.standard_normal(nb)
    vecB = mean + np.linalg.solve(L.T, z)
    if not np.all(np.isfinite(vecB)):
        raise SamplerNumericalError("non-finite draw of vec(B)")
    state.B = vecB.reshape(k, spec.n_coef, order="F")


def draw_gamma(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    Y: np.ndarray, X: np.ndarray, rng: np.random.Generator,
) -> None:
    """Step 2: conjugate Gaussian update of the skewness vector."""
    if not spec.family.has_skew:
        return
    k = spec.k
    e = Y - X @ state.B.T
    Wk = _expand_mix(spec, state.xi)
    A = a_to_matrix(state.a, k)
    prec = np.eye(k) / prior.Vgamma
    rhs = np.zeros(k)
    if Y.shape[0] > 0:
        H = np.exp(state.logh)
        if spec.family.orthogonal:
            # equations decouple in the structural space
            z = e @ A.T
            prec = prec + np.diag(np.sum(Wk / H, axis=0))
            rhs = rhs + np.sum(z / H, axis=0)
        else:
            M = _sigma_inv_factors(spec, state, A)
            S = np.einsum("tli,tlj->tij", M, M)
            prec = prec + np.einsum("tij,ti,tj->ij", S, Wk, Wk)
            rhs = rhs + np.einsum("ti,tij,tj->i", Wk, S, e)
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, rhs)
    state.gamma = mean + np.linalg.solve(L.T, rng.standard_normal(k))
    if not np.all(np.isfinite(state.gamma)):
        raise SamplerNumericalError("non-finite draw of gamma")


def draw_A(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    Y: np.ndarray, X: np.ndarray, rng: np.random.Generator,
) -> None:
    """Step 3: equation-by-equation update of the triangular coefficients."""
    k = spec.k
    if k < 2:
        return
    e = Y - X @ state.B.T
    Wk = _expand_mix(spec, state.xi)
    H = np.exp(state.logh)
    if spec.family.orthogonal:
        dep = e - Wk * state.gamma if spec.family.has_skew else e.copy()
        reg = e
        noise = Wk * H
    else:
        u = e - Wk * state.gamma if spec.family.has_skew else e
        u = u / np.sqrt(Wk)
        dep = u
        reg = u
        noise = H
    a_new = np.empty_like(state.a)
    pos = 0
    for i in range(1, k):
        R = -reg[:, :i]  # regressors for equation i
        w = 1.0 / noise[:, i]
        prec = np.eye(i) / prior.Va + (R * w[:, None]).T @ R
        rhs = (R * w[:, None]).T @ dep[:, i]
        L = np.linalg.cholesky(prec)
        mean = np.linalg.solve(prec, rhs)
        a_new[pos : pos + i] = mean + np.linalg.solve(L.T, rng.standard_normal(i))
        pos += i
    if not np.all(np.isfinite(a_new)):
        raise SamplerNumericalError("non-finite draw of a")
    state.a = a_new


def _draw_mix_indicators(
    ystar: np.ndarray, logh: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Sample the auxiliary mixture component labels given the volatilities."""
    tbl = ksc_table()
    resid = ystar - logh  # n x k
    logp = (
        np.log(tbl.probs)[None, None, :]
        - 0.5 * np.log(2 * np.pi * tbl.variances)[None, None, :]
        - 0.5 * (resid[:, :, None] - tbl.means[None, None, :]) ** 2 / tbl.variances[None, None, :]
    )
    logp -= logp.max(axis=2, keepdims=True)
    p = np.exp(logp)
    p /= p.sum(axis=2, keepdims=True)
    cum = np.cumsum(p, axis=2)
    u = rng.random(resid.shape)
    return (u[:, :, None] > cum).sum(axis=2)


def _ffbs_random_walk(
    obs: np.ndarray,
    obs_var: np.ndarray,
    sigma2: np.ndarray,
    prior_mean: np.ndarray,
    prior_var: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample random-walk state paths (incl. the t=0 state) per equation.

    ``obs[t, i] = x[t, i] + N(0, obs_var[t, i])``, ``x[t] = x[t-1] +
    N(0, sigma2[i])`` and ``x[0] ~ N(prior_mean[i], prior_var)``.  Returns
    an (n+1) x k array whose first row is the initial state.  All
    equations are filtered in lockstep (they are conditionally
    independent).
    """
    n, k = obs.shape
    fm = np.empty((n + 1, k))  # filtered means, index 0 = initial state
    fv = np.empty((n + 1, k))
    fm[0] = prior_mean
    fv[0] = prior_var
    for t in range(1, n + 1):
        pm = fm[t - 1]
        pv = fv[t - 1] + sigma2
        gain = pv / (pv + obs_var[t - 1])
        fm[t] = pm + gain * (obs[t - 1] - pm)
        fv[t] = pv * (1.0 - gain)
    if not np.all(np.isfinite(fm)):
        bad = np.argwhere(~np.isfinite(fm))
        raise SamplerNumericalError(f"volatility filter diverged at (t,i)={tuple(bad[0])}")
    x = np.empty((n + 1, k))
    x[n] = fm[n] + np.sqrt(fv[n]) * rng.standard_normal(k)
    for t in range(n - 1, -1, -1):
        denom = fv[t] + sigma2
        with np.errstate(invalid="ignore"):
            gain = np.where(denom > 0, fv[t] / denom, 0.0)
        cm = fm[t] + gain * (x[t + 1] - fm[t])
        cv = fv[t] * (1.0 - gain)
        x[t] = cm + np.sqrt(np.maximum(cv, 0.0)) * rng.standard_normal(k)
    return x


def _mixture_marginal_logpdf(resid: np.ndarray) -> np.ndarray:
    """log density of the 7-component approximation to log chi^2_1."""
    tbl = ksc_table()
    z = (
        np.log(tbl.probs)
        - 0.5 * np.log(2 * np.pi * tbl.variances)
        - 0.5 * (resid[..., None] - tbl.means) ** 2 / tbl.variances
    )
    mx = z.max(axis=-1)
    return mx + np.log(np.exp(z - mx[..., None]).sum(axis=-1))


def _exact_minus_aux(zeta2: np.ndarray, ystar: np.ndarray, logh: np.ndarray) -> np.ndarray:
    """Per-equation sum of exact log-likelihood minus mixture log-density.

    This is the only quantity the volatility accept/reject needs: the
    auxiliary indicator probabilities and the Gaussian path densities of
    the smoother cancel analytically against the prior terms.
    """
    exact = -0.5 * logh - 0.5 * zeta2 * np.exp(-logh)
    aux = _mixture_marginal_logpdf(ystar - logh)
    return np.sum(exact - aux, axis=0)


def draw_h(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    Y: np.ndarray, X: np.ndarray, rng: np.random.Generator,
) -> None:
    """Step 4: mixture indicators, FFBS proposal, exact accept/reject.

    The auxiliary-mixture smoother alone targets the linearized model;
    accepting its path draws against the exact measurement density makes
    the step invariant for the true conditional.  Without stochastic
    volatility the path is flat and only the constant log-variance h_0 is
    updated, through the same corrected device.
    """
    k = spec.k
    n = Y.shape[0]
    h0_mean = prior.h0_mean_for(k)
    if n == 0:
        state.logh0 = h0_mean + np.sqrt(prior.h0_var) * rng.standard_normal(k)
        state.logh = np.zeros((0, k))
        return
    A = a_to_matrix(state.a, k)
    e = Y - X @ state.B.T
    zeta = _orthogonal_std_residuals(spec, state, e, A)
    zeta2 = zeta**2
    ystar = np.log(zeta2 + LOG_CHI2_OFFSET)
    state.mix_ind = _draw_mix_indicators(ystar, state.logh, rng)
    tbl = ksc_table()
    obs = ystar - tbl.means[state.mix_ind]
    obs_var = tbl.variances[state.mix_ind]
    if spec.sv:
        x = _ffbs_random_walk(obs, obs_var, state.sigma2, h0_mean, prior.h0_var, rng)
        prop_logh0, prop_logh = x[0], x[1:]
    else:
        prec = 1.0 / prior.h0_var + np.sum(1.0 / obs_var, axis=0)
        mean = (h0_mean / prior.h0_var + np.sum(obs / obs_var, axis=0)) / prec
        prop_logh0 = mean + rng.standard_normal(k) / np.sqrt(prec)
        prop_logh = np.tile(prop_logh0, (n, 1))
    log_acc = _exact_minus_aux(zeta2, ystar, prop_logh) - _exact_minus_aux(
        zeta2, ystar, state.logh
    )
    accept = np.log(rng.random(k)) < log_acc
    state.logh0 = np.where(accept, prop_logh0, state.logh0)
    state.logh = np.where(accept[None, :], prop_logh, state.logh)
    state.accept["h"] = state.accept.get("h", []) + [float(accept.mean())]


def draw_sigma2(
    spec: ModelSpec, prior: PriorSpec, state: ChainState, rng: np.random.Generator
) -> None:
    """Step 5: independent MH for the volatility-of-volatility variances."""
    if not spec.sv:
        return
    n = state.logh.shape[0]
    if n == 0:
        # prior draw: +/- sqrt(sigma2) ~ N(0, Vsigma)
        state.sigma2 = (np.sqrt(prior.Vsigma) * rng.standard_normal(spec.k)) ** 2
        return
    path = np.vstack([state.logh0, state.logh])
    beta = 0.5 * np.sum(np.diff(path, axis=0) ** 2, axis=0)
    beta = np.maximum(beta, 1e-12)
    prop = invgamma_sample(0.5 * n, beta, rng, size=spec.k)
    log_acc = 0.5 * (np.log(prop) - np.log(state.sigma2)) + (state.sigma2 - prop) / (
        2.0 * prior.Vsigma
    )
    accept = np.log(rng.random(spec.k)) < log_acc
    state.sigma2 = np.where(accept, prop, state.sigma2)
    state.accept["sigma2"] = state.accept.get("sigma2", []) + [float(accept.mean())]


def _nu_log_target(nu, prior: PriorSpec, sum_log_xi: float, sum_inv_xi: float, n: int):
    half = 0.5 * nu
    lp = (prior.nu_shape - 1.0) * np.log(nu) - prior.nu_rate * nu
    lik = n * (half * np.log(half) - special.gammaln(half)) - (half + 1.0) * sum_log_xi - half * sum_inv_xi
    return lp + lik


def draw_nu(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    rng: np.random.Generator, sweep: int,
) -> None:
    """Step 6: adaptive random-walk MH on each degrees-of-freedom parameter.

    Proposals at or below 2 are rejected outright so the mixing variables
    keep a finite mean; the log step sizes chase a 0.25 acceptance rate
    during adaptation and are frozen afterwards.
    """
    if not spec.family.has_mixing:
        return
    n = state.xi.shape[0]
    tun = state.tuning
    accs = []
    for j in range(spec.n_mix):
        xij = state.xi[:, j]
        slx = float(np.sum(np.log(xij)))
        six = float(np.sum(1.0 / xij))
        cur = state.nu[j]
        prop = cur + rng.standard_normal() * np.exp(tun.c_nu[j])
        acc = 0.0
        if prop > 2.0:
            lr = _nu_log_target(prop, prior, slx, six, n) - _nu_log_target(
                cur, prior, slx, six, n
            )
            acc = min(1.0, float(np.exp(min(lr, 0.0))))
            if np.log(rng.random()) < lr:
                state.nu[j] = prop
        accs.append(acc)
        if tun.adapt:
            tun.c_nu[j] += (acc - tun.target_accept_nu) / max(sweep, 1) ** 0.6
    state.accept["nu"] = state.accept.get("nu", []) + [float(np.mean(accs))]


def _log_t4(z):
    return stats.t.logpdf(z, df=4)


def draw_xi(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    Y: np.ndarray, X: np.ndarray, rng: np.random.Generator,
) -> None:
    """Step 7: Metropolis-Hastings update of the mixing variables.

    MT/MST propose the whole k-vector per period from inverse-gamma
    proposals and accept jointly; shared-mixing families aggregate the
    quadratic form over equations; OST uses per-element mode/curvature
    t(4) proposals on the log scale (exact conjugate draws for OT).
    """
    if not spec.family.has_mixing:
        return
    n = Y.shape[0]
    if n == 0:
        state.xi = invgamma_sample(
            0.5 * state.nu, 0.5 * state.nu, rng, size=(0, spec.n_mix)
        ).reshape(0, spec.n_mix)
        return
    k = spec.k
    A = a_to_matrix(state.a, k)
    e = Y - X @ state.B.T
    H = np.exp(state.logh)
    c = state.tuning.c_xi
    nu = state.nu

    if spec.family.orthogonal:
        z = e @ A.T  # structural residuals, n x k
        if not spec.family.has_skew:
            # exact conjugate conditional, acceptance identically 1
            shape = 0.5 * (nu + 1.0)
            rate = 0.5 * (nu + z**2 / H)
            state.xi = invgamma_sample(np.broadcast_to(shape, z.shape), rate, rng)
            state.accept["xi"] = state.accept.get("xi", []) + [1.0]
            return
        # OST: concave log-conditional in log(xi); closed-form mode
        lam = np.log(state.xi)
        a_c = 0.5 * (nu + 1.0)[None, :]
        b_c = 0.5 * (nu[None, :] + z**2 / H)
        c_c = 0.5 * state.gamma[None, :] ** 2 / H
        c_c = np.maximum(c_c, 1e-300)
        mode_u = (-a_c + np.sqrt(a_c**2 + 4.0 * b_c * c_c)) / (2.0 * c_c)
        mode = np.log(mode_u)
        curv = b_c * np.exp(-mode) + c_c * np.exp(mode)
        scale = 1.0 / np.sqrt(curv)
        zdraw = rng.standard_t(4, size=lam.shape)
        lam_new = mode + scale * zdraw

        def g(lmb):
            # log conditional in lambda = log(xi), up to terms constant in lambda
            return -a_c * lmb - b_c * np.exp(-lmb) - c_c * np.exp(lmb)

        lr = (
            g(lam_new)
            - g(lam)
            + _log_t4((lam - mode) / scale)
            - _log_t4((lam_new - mode) / scale)
        )
        accept = np.log(rng.random(lam.shape)) < lr
        lam = np.where(accept & np.isfinite(lam_new), lam_new, lam)
        state.xi = np.exp(lam)
        state.accept["xi"] = state.accept.get("xi", []) + [float(accept.mean())]
        return

    # Proposal residuals.  The skew offset uses the conditional-prior mean
    # of xi, not the current draw, so the proposal stays independent of the
    # state being updated (required for the independence-MH ratio below).
    if spec.family.has_skew:
        xi_bar = nu / (nu - 2.0)
        if spec.family.shared_mixing:
            off = xi_bar[0] * state.gamma
        else:
            off = xi_bar * state.gamma
        d = (e - off) @ A.T
    else:
        d = e @ A.T

    def log_target(xi_cols):
        """Joint conditional of the period-t mixing vector, all t at once."""
        Wfull = _expand_mix(spec, xi_cols)
        v = e - (Wfull * state.gamma if spec.family.has_skew else 0.0)
        q = np.sum(((v / np.sqrt(Wfull)) @ A.T) ** 2 / H, axis=1)
        return (
            -0.5 * np.sum(np.log(Wfull), axis=1)
            - 0.5 * q
            + np.sum(invgamma_logpdf(xi_cols, 0.5 * nu[None, :], 0.5 * nu[None, :]), axis=1)
        )

    if spec.family.shared_mixing:
        shape = 0.5 * c * (nu[0] + k)
        quad = np.sum(d**2 / H, axis=1)
        rate = 0.5 * c * (nu[0] + quad)
        prop = invgamma_sample(np.full(n, shape), rate, rng).reshape(n, 1)
        lq_old = invgamma_logpdf(state.xi[:, 0], shape, rate)
        lq_new = invgamma_logpdf(prop[:, 0], shape, rate)
    else:
        shape = 0.5 * c * (nu[None, :] + 1.0)
        rate = 0.5 * c * (nu[None, :] + d**2 / H)
        prop = invgamma_sample(np.broadcast_to(shape, d.shape), rate, rng)
        lq_old = np.sum(invgamma_logpdf(state.xi, shape, rate), axis=1)
        lq_new = np.sum(invgamma_logpdf(prop, shape, rate), axis=1)
    lr = log_target(prop) - log_target(state.xi) + lq_old - lq_new
    accept = np.log(rng.random(n)) < lr
    state.xi = np.where(accept[:, None], prop, state.xi)
    state.accept["xi"] = state.accept.get("xi", []) + [float(accept.mean())]


def init_state(
    spec: ModelSpec, prior: PriorSpec, Y: np.ndarray, rng: np.random.Generator,
    tuning: MhTuning = None, overdisperse: bool = False,
) -> ChainState:
    """Starting values at the prior center, or (overdisperse) a prior draw.

    Overdispersed starts are intended for multi-chain runs: chains with
    different seeds then start from independent prior draws instead of the
    identical deterministic point, which is what convergence diagnostics and
    pooled quantiles assume.
    """
    n = Y.shape[0]
    k = spec.k
    tun = tuning or MhTuning()
    tun.init_for(spec.n_mix)
    B = prior.b0.reshape(k, spec.n_coef, order="F").copy()
    a = np.zeros(spec.n_a)
    gamma = np.zeros(k)
    nu = np.full(spec.n_mix, 2.0 / prior.nu_rate)
    sigma2 = np.full(k, 0.01 if spec.sv else 0.0)
    logh0 = prior.h0_mean_for(k).copy()
    if overdisperse:
        B = (prior.b0 + np.sqrt(prior.Vb0) * rng.standard_normal(prior.b0.size)).reshape(
            k, spec.n_coef, order="F"
        )
        a = np.sqrt(prior.Va) * rng.standard_normal(spec.n_a)
        if spec.family.has_skew:
            gamma = np.sqrt(prior.Vgamma) * rng.standard_normal(k)
        if spec.family.has_mixing:
            for j in range(spec.n_mix):
                v = 0.0
                while v <= 2.0:
                    v = rng.gamma(prior.nu_shape, 1.0 / prior.nu_rate)
                nu[j] = v
        if spec.sv:
            sigma2 = (np.sqrt(prior.Vsigma) * rng.standard_normal(k)) ** 2
            logh0 = logh0 + np.sqrt(prior.h0_var) * rng.standard_normal(k)
    return ChainState(
        B=B,
        a=a,
        gamma=gamma,
        nu=nu,
        sigma2=sigma2,
        logh0=logh0,
        xi=np.ones((n, spec.n_mix)),
        logh=np.tile(logh0, (n, 1)),
        mix_ind=np.zeros((n, k), dtype=int),
        tuning=tun,
    )


def sweep(
    spec: ModelSpec, prior: PriorSpec, state: ChainState,
    Y: np.ndarray, X: np.ndarray, rng: np.random.Generator, sweep_index: int = 1,
) -> None:
    """One full pass over steps 1-7, skipping inapplicable steps."""
    draw_B(spec, prior, state, Y, X, rng)
    draw_gamma(spec, prior, state, Y, X, rng)
    draw_A(spec, prior, state, Y, X, rng)
    draw_h(spec, prior, state, Y, X, rng)
    draw_sigma2(spec, prior, state, rng)
    draw_nu(spec, prior, state, rng, sweep_index)
    draw_xi(spec, prior, state, Y, X, rng)


def run_chain(
    spec: ModelSpec,
    prior: PriorSpec,
    data: Dataset,
    n_draws: int = 20_000,
    n_burn: int = 5_000,
    thin: int = 1,
    seed: int = 0,
    keep_latents: bool = True,
    progress: bool = False,
    overdisperse_init: bool = False,
) -> PosteriorDraws:
    """Run one Metropolis-within-Gibbs chain and return the retained draws.

    With ``overdisperse_init`` the chain starts from a draw of the prior
    (seeded by ``seed``) rather than the prior center; use it when pooling
    several chains so their starting points are actually dispersed.
    """
    if n_burn >= n_draws:
        raise ValueError("n_burn must be smaller than n_draws")
    Y, X = build_design(data, spec.p)
    if Y.shape[1] != spec.k:
        raise ValueError("data dimension does not match ModelSpec.k")
    rng = np.random.default_rng(seed)
    state = init_state(spec, prior, Y, rng, overdisperse=overdisperse_init)
    n_keep = (n_draws - n_burn) // thin
    n = Y.shape[0]
    out = PosteriorDraws(
        spec=spec,
        B=np.empty((n_keep, spec.k, spec.n_coef)),
        a=np.empty((n_keep, spec.n_a)),
        gamma=np.empty((n_keep, spec.k)),
        nu=np.empty((n_keep, spec.n_mix)),
        sigma2=np.empty((n_keep, spec.k)),
        logh0=np.empty((n_keep, spec.k)),
        xi=np.empty((n_keep, n, spec.n_mix)) if keep_latents else None,
        logh=np.empty((n_keep, n, spec.k)) if keep_latents else None,
        seed=seed,
    )
    kept = 0
    for it in range(1, n_draws + 1):
        if it == n_burn + 1:
            state.tuning.adapt = False  # freeze adaptation after burn-in
            state.accept = {}
        try:
            sweep(spec, prior, state, Y, X, rng, it)
        except SamplerNumericalError as exc:
            raise SamplerNumericalError(f"sweep {it}: {exc}") from exc
        if it > n_burn and (it - n_burn) % thin == 0 and kept < n_keep:
            out.B[kept] = state.B
            out.a[kept] = state.a
            out.gamma[kept] = state.gamma
            out.nu[kept] = state.nu
            out.sigma2[kept] = state.sigma2
            out.logh0[kept] = state.logh0
            if keep_latents:
                out.xi[kept] = state.xi
                out.logh[kept] = state.logh
            kept += 1
        if progress and it % 1000 == 0:
            print(f"sweep {it}/{n_draws}")
    out.acceptance = {key: float(np.mean(vals)) for key, vals in state.accept.items()}
    # conjugate steps always accept
    for key in ("B", "gamma", "a"):
        out.acceptance.setdefault(key, 1.0)
    return out
