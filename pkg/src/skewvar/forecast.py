"""Recursive out-of-sample forecasting and probabilistic scoring.

Forecast paths are simulated from the generative equations of each model:
future log volatilities follow the random walk (fresh shocks each period),
mixing variables are drawn fresh from their inverse-gamma prior, and the
terminal observation keeps its Gaussian conditional parameters given the
simulated (W, H) so the log predictive score can be Rao-Blackwellized.
"""

from __future__ import annotations

import warnings
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
    default_prior,
)
from skewvar.distributions import invgamma_sample
from skewvar.gibbs import PosteriorDraws, run_chain

EXPLOSIVE_LIMIT = 1e10
LOG_SCORE_FLOOR = -1e6
DEFAULT_CRPS_DRAWS = 10_000


@dataclass(frozen=True)
class ForecastConfig:
    """Evaluation window and horizon settings for recursive forecasting.

    ``origin_start`` is the number of observations in the first estimation
    sample; origins run through ``sample_end`` minus the horizon.  Both are
    observation counts, not calendar dates.
    """

    origin_start: int
    sample_end: int
    horizons: tuple = (1, 3, 6, 12)
    n_paths: int = 1

    def __post_init__(self):
        if self.origin_start >= self.sample_end:
            raise ValueError("origin_start must precede sample_end")
        if any(h < 1 for h in self.horizons):
            raise ValueError("horizons must be >= 1")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")

    def origins(self, horizon: int) -> np.ndarray:
        return np.arange(self.origin_start, self.sample_end - horizon + 1)


@dataclass
class PredictiveEnsemble:
    """Simulated predictive draws and their conditional Gaussian parameters.

    For each horizon h, arrays are indexed (origin, component, variable)
    where components run over posterior draws times simulated paths.
    """

    spec: ModelSpec
    config: ForecastConfig
    draws: dict = field(default_factory=dict)  # h -> (n_origin, n_comp, k)
    cond_mean: dict = field(default_factory=dict)
    cond_var: dict = field(default_factory=dict)
    explosive: dict = field(default_factory=dict)  # h -> (n_origin,) bool

    def n_components(self, horizon: int) -> int:
        return self.draws[horizon].shape[1]


def _one_step_innovation(
    spec: ModelSpec,
    params: ParameterDraw,
    A_inv: np.ndarray,
    logh: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One simulated u_t plus the conditional (mean offset, variance diagonal
    factors) of y given the simulated (W, H)."""
    k = spec.k
    if spec.family.has_mixing:
        xi = invgamma_sample(0.5 * params.nu, 0.5 * params.nu, rng)
        W = np.repeat(xi, k) if spec.family.shared_mixing else xi
    else:
        W = np.ones(k)
    H = np.exp(logh)
    eps = rng.standard_normal(k)
    if spec.family.orthogonal or spec.family is ErrorFamily.GAUSSIAN:
        inner = np.sqrt(W * H) * eps
        if spec.family.has_skew:
            inner = inner + W * params.gamma
        u = A_inv @ inner
        offset = A_inv @ (W * params.gamma) if spec.family.has_skew else np.zeros(k)
        cov = (A_inv * (W * H)) @ A_inv.T
    else:
        u = np.sqrt(W) * (A_inv @ (np.sqrt(H) * eps))
        offset = W * params.gamma if spec.family.has_skew else np.zeros(k)
        if spec.family.has_skew:
            u = u + offset
        sqW = np.sqrt(W)
        cov = sqW[:, None] * ((A_inv * H) @ A_inv.T) * sqW[None, :]
    return u, offset, np.diag(cov)


def simulate_predictive(
    spec: ModelSpec,
    params: ParameterDraw,
    latents: LatentPaths,
    values: np.ndarray,
    horizon: int,
    rng: np.random.Generator,
    n_paths: int = 1,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, bool]:
    """Simulate y at ``horizon`` steps past the end of ``values``.

    Returns (draws, conditional means, conditional variance diagonals) with
    shape (n_paths, k) each, plus a flag marking explosive paths.  The
    conditional parameters describe the Gaussian law of the terminal
    observation given the simulated mixing and volatility states.
    """
    k, p = spec.k, spec.p
    if values.shape[0] < p:
        raise ValueError("need at least p observations to forecast")
    A_inv = np.linalg.inv(a_to_matrix(params.a, k))
    logh_T = latents.logh[-1] if (spec.sv and latents.logh.shape[0]) else params.logh0
    out_draw = np.empty((n_paths, k))
    out_mean = np.empty((n_paths, k))
    out_var = np.empty((n_paths, k))
    explosive = False
    for m in range(n_paths):
        hist = list(values[-p:]) if p else []
        logh = logh_T.copy()
        for j in range(1, horizon + 1):
            if spec.sv:
                logh = logh + np.sqrt(params.sigma2) * rng.standard_normal(k)
            else:
                logh = params.logh0
            x = np.concatenate(
                [[1.0]] + [hist[-lag] for lag in range(1, p + 1)]
            ) if p else np.ones(1)
            u, offset, var_diag = _one_step_innovation(spec, params, A_inv, logh, rng)
            mean = params.B @ x
            y = mean + u
            if p:
                hist.append(y)
            if j == horizon:
                out_draw[m] = y
                out_mean[m] = mean + offset
                out_var[m] = var_diag
        if np.any(np.abs(out_draw[m]) > EXPLOSIVE_LIMIT):
            explosive = True
    return out_draw, out_mean, out_var, explosive


def build_ensemble(
    spec: ModelSpec,
    draws: PosteriorDraws,
    values: np.ndarray,
    config: ForecastConfig,
    origin: int,
    rng: np.random.Generator,
) -> dict:
    """Predictive components for one forecast origin, all horizons.

    Returns per-horizon (draws, means, variances, explosive) built from
    every retained posterior draw times ``config.n_paths`` paths.
    """
    out = {}
    R = draws.n_draws
    for h in config.horizons:
        if origin + h > config.sample_end:
            continue
        n_comp = R * config.n_paths
        yd = np.empty((n_comp, spec.k))
        cm = np.empty((n_comp, spec.k))
        cv = np.empty((n_comp, spec.k))
        expl = False
        for r in range(R):
            params, lat = draws.draw(r)
            d, m, v, e = simulate_predictive(
                spec, params, lat, values[:origin], h, rng, config.n_paths
            )
            sl = slice(r * config.n_paths, (r + 1) * config.n_paths)
            yd[sl], cm[sl], cv[sl] = d, m, v
            expl = expl or e
        out[h] = (yd, cm, cv, expl)
    return out


def recursive_forecast(
    spec: ModelSpec,
    data: Dataset,
    config: ForecastConfig,
    n_draws: int = 2000,
    n_burn: int = 500,
    thin: int = 1,
    seed: int = 0,
    prior: PriorSpec = None,
) -> PredictiveEnsemble:
    """Expanding-window re-estimation and prediction over all origins."""
    values = data.values
    if config.sample_end > values.shape[0]:
        raise ValueError("sample_end exceeds the available observations")
    ens = PredictiveEnsemble(spec=spec, config=config)
    for h in config.horizons:
        origins = config.origins(h)
        if origins.size == 0:
            warnings.warn(f"horizon {h} exceeds the evaluation sample; skipped")
            continue
        ens.draws[h] = None  # filled below once the component count is known
    rng = np.random.default_rng(seed)
    for idx, origin in enumerate(config.origins(1)):
        sub = Dataset(
            names=data.names,
            dates=data.dates[:origin],
            values=values[:origin],
            transforms=data.transforms,
        )
        pr = prior or default_prior(spec, sub)
        post = run_chain(
            spec, pr, sub, n_draws=n_draws, n_burn=n_burn, thin=thin,
            seed=seed + origin, keep_latents=True,
        )
        parts = build_ensemble(spec, post, values, config, origin, rng)
        for h, (yd, cm, cv, expl) in parts.items():
            o_list = config.origins(h)
            if origin not in o_list:
                continue
            j = int(np.searchsorted(o_list, origin))
            if ens.draws.get(h) is None:
                n_o = o_list.size
                ens.draws[h] = np.empty((n_o, yd.shape[0], spec.k))
                ens.cond_mean[h] = np.empty_like(ens.draws[h])
                ens.cond_var[h] = np.empty_like(ens.draws[h])
                ens.explosive[h] = np.zeros(n_o, dtype=bool)
            ens.draws[h][j] = yd
            ens.cond_mean[h][j] = cm
            ens.cond_var[h][j] = cv
            ens.explosive[h][j] = expl
    return ens


# ---------------------------------------------------------------------------
# scoring rules


def _actuals(values: np.ndarray, config: ForecastConfig, horizon: int) -> np.ndarray:
    idx = config.origins(horizon) + horizon - 1
    return values[idx]


@dataclass
class ScoreTable:
    """Per-horizon scores: means over origins plus the per-origin series."""

    mean: dict  # h -> (k,)
    per_origin: dict  # h -> (n_origin, k)
    flags: tuple = ()


def msfe(ens: PredictiveEnsemble, values: np.ndarray) -> ScoreTable:
    """Mean squared forecast error of the ensemble-mean forecast."""
    mean, per = {}, {}
    for h, yd in ens.draws.items():
        if yd is None:
            continue
        if np.max(ens.config.origins(h)) + h > values.shape[0]:
            warnings.warn(f"horizon {h} exceeds the actuals; skipped")
            continue
        err = yd.mean(axis=1) - _actuals(values, ens.config, h)
        per[h] = err**2
        mean[h] = per[h].mean(axis=0)
    return ScoreTable(mean=mean, per_origin=per)


def lp_rao_blackwell(ens: PredictiveEnsemble, values: np.ndarray) -> ScoreTable:
    """Average log predictive score using the conditional Gaussian mixture.

    Each component contributes its exact Gaussian density given the
    simulated latent states, so the mixture over components is the
    Rao-Blackwellized estimate of the predictive density.
    """
    mean, per = {}, {}
    floored = False
    for h in ens.cond_mean:
        actual = _actuals(values, ens.config, h)  # (n_o, k)
        cm, cv = ens.cond_mean[h], ens.cond_var[h]
        comp = stats.norm.logpdf(actual[:, None, :], cm, np.sqrt(cv))
        lp = special.logsumexp(comp, axis=1) - np.log(comp.shape[1])
        bad = ~np.isfinite(lp)
        if np.any(bad):
            lp = np.where(bad, LOG_SCORE_FLOOR, lp)
            floored = True
        per[h] = lp
        mean[h] = lp.mean(axis=0)
    return ScoreTable(mean=mean, per_origin=per, flags=("floored",) if floored else ())


def crps_mc(ens: PredictiveEnsemble, values: np.ndarray) -> ScoreTable:
    """Monte Carlo CRPS from paired independent predictive draws."""
    mean, per = {}, {}
    for h, yd in ens.draws.items():
        if yd is None:
            continue
        n_comp = yd.shape[1]
        if n_comp < 2:
            raise ValueError("CRPS needs at least two predictive draws")
        actual = _actuals(values, ens.config, h)
        term1 = np.mean(np.abs(yd - actual[:, None, :]), axis=1)
        half = (n_comp // 2) * 2
        pair_diff = np.abs(yd[:, 0:half:2, :] - yd[:, 1:half:2, :])
        term2 = 0.5 * np.mean(pair_diff, axis=1)
        per[h] = term1 - term2
        mean[h] = per[h].mean(axis=0)
    return ScoreTable(mean=mean, per_origin=per)


def pit(ens: PredictiveEnsemble, values: np.ndarray, n_bins: int = 10) -> dict:
    """Probability integral transforms and their histogram per horizon.

    Returns h -> (u values (n_origin, k), bin counts (n_bins, k)).
    """
    out = {}
    for h, yd in ens.draws.items():
        if yd is None:
            continue
        actual = _actuals(values, ens.config, h)
        u = np.mean(yd <= actual[:, None, :], axis=1)
        counts = np.empty((n_bins, u.shape[1]), dtype=int)
        edges = np.linspace(0.0, 1.0, n_bins + 1)
        for i in range(u.shape[1]):
            counts[:, i], _ = np.histogram(u[:, i], bins=edges)
        out[h] = (u, counts)
    return out


def cum_log_bf(lp_a: np.ndarray, lp_b: np.ndarray) -> np.ndarray:
    """Running sum of log score differences; positive favors the second model."""
    lp_a = np.asarray(lp_a, dtype=float)
    lp_b = np.asarray(lp_b, dtype=float)
    if lp_a.shape != lp_b.shape:
        raise ValueError("log score series must have equal shapes")
    return np.cumsum(lp_b - lp_a, axis=0)


def dm_test_nw(loss_diff: np.ndarray, horizon: int) -> tuple[float, float]:
    """One-sided Diebold-Mariano test with a Newey-West variance.

    ``loss_diff`` should be positive when the second model is better; the
    alternative is that its mean is positive.  Bartlett-kernel truncation
    at horizon - 1 accounts for forecast overlap.  A degenerate (constant)
    differential is reported as non-significant.
    """
    d = np.asarray(loss_diff, dtype=float)
    n = d.size
    lag = horizon - 1
    if n <= 2 * lag + 1:
        raise ValueError("series too short for the requested horizon")
    dbar = d.mean()
    dc = d - dbar
    s = float(dc @ dc) / n
    for j in range(1, lag + 1):
        gam = float(dc[:-j] @ dc[j:]) / n
        s += 2.0 * (1.0 - j / (lag + 1.0)) * gam
    if s <= 0 or np.ptp(d) == 0.0:
        return float("nan"), 1.0
    stat = dbar / np.sqrt(s / n)
    pvalue = float(stats.norm.sf(stat))
    return float(stat), pvalue


def dm_stars(pvalue: float) -> str:
    """Significance stars at the 1/5/10% levels."""
    if not np.isfinite(pvalue):
        return ""
    if pvalue < 0.01:
        return "***"
    if pvalue < 0.05:
        return "**"
    if pvalue < 0.10:
        return "*"
    return ""
