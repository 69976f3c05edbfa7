import numpy as np
import pytest
from scipy import stats

from skewvar.datamodel import Dataset, LatentPaths, ModelSpec, ParameterDraw
from skewvar.forecast import (
    ForecastConfig,
    PredictiveEnsemble,
    crps_mc,
    cum_log_bf,
    dm_stars,
    dm_test_nw,
    lp_rao_blackwell,
    msfe,
    pit,
    recursive_forecast,
    simulate_predictive,
)


def _gaussian_ensemble(mu, sigma, actuals, n_comp=10_000, horizon=1, seed=0):
    """Ensemble whose predictive is exactly N(mu, sigma^2) at every origin."""
    n_o = actuals.shape[0]
    rng = np.random.default_rng(seed)
    cfg = ForecastConfig(origin_start=1, sample_end=n_o + horizon, horizons=(horizon,))
    ens = PredictiveEnsemble(spec=ModelSpec(family="gaussian", sv=False, p=1, k=1),
                             config=cfg)
    ens.draws[horizon] = mu + sigma * rng.standard_normal((n_o, n_comp, 1))
    ens.cond_mean[horizon] = np.full((n_o, n_comp, 1), mu)
    ens.cond_var[horizon] = np.full((n_o, n_comp, 1), sigma**2)
    ens.explosive[horizon] = np.zeros(n_o, dtype=bool)
    return ens, cfg


def _values_for(cfg, actuals, horizon):
    # _actuals indexes values[origins + h - 1]
    n = cfg.sample_end
    vals = np.zeros((n, 1))
    idx = cfg.origins(horizon) + horizon - 1
    vals[idx, 0] = actuals
    return vals


class TestCrps:
    def test_matches_gaussian_closed_form(self):
        # CRPS of N(mu, sigma^2) at y: sigma * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi))
        mu, sigma = 0.3, 1.4
        actuals = np.array([0.0, 1.0, -2.0, 3.5])
        ens, cfg = _gaussian_ensemble(mu, sigma, actuals, n_comp=10_000)
        table = crps_mc(ens, _values_for(cfg, actuals, 1))
        z = (actuals - mu) / sigma
        closed = sigma * (
            z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / np.sqrt(np.pi)
        )
        assert np.allclose(table.per_origin[1][:, 0], closed, rtol=0.03)
        assert table.mean[1][0] == pytest.approx(closed.mean(), rel=0.01)

    def test_point_mass_limit(self):
        # all draws equal to f: CRPS = |f - y|
        cfg = ForecastConfig(origin_start=1, sample_end=3, horizons=(1,))
        ens = PredictiveEnsemble(spec=ModelSpec(family="gaussian", sv=False, p=1, k=1),
                                 config=cfg)
        ens.draws[1] = np.full((2, 50, 1), 2.0)
        vals = np.zeros((3, 1))
        vals[cfg.origins(1), 0] = [2.0, 3.0]
        table = crps_mc(ens, vals)
        assert np.allclose(table.per_origin[1][:, 0], [0.0, 1.0])

    def test_needs_two_draws(self):
        cfg = ForecastConfig(origin_start=1, sample_end=2, horizons=(1,))
        ens = PredictiveEnsemble(spec=ModelSpec(family="gaussian", sv=False, p=1, k=1),
                                 config=cfg)
        ens.draws[1] = np.zeros((1, 1, 1))
        with pytest.raises(ValueError):
            crps_mc(ens, np.zeros((2, 1)))


class TestLogScore:
    def test_single_component_is_exact_density(self):
        mu, sigma = 0.5, 2.0
        actuals = np.array([0.0, 1.0, -1.0])
        ens, cfg = _gaussian_ensemble(mu, sigma, actuals, n_comp=1)
        table = lp_rao_blackwell(ens, _values_for(cfg, actuals, 1))
        expect = stats.norm.logpdf(actuals, mu, sigma)
        assert np.allclose(table.per_origin[1][:, 0], expect, atol=1e-12)

    def test_floor_applied_to_zero_density(self):
        # a conditional density that underflows to exactly zero
        actuals = np.array([np.inf])
        ens, cfg = _gaussian_ensemble(0.0, 1e-3, actuals, n_comp=3)
        table = lp_rao_blackwell(ens, _values_for(cfg, actuals, 1))
        assert table.per_origin[1][0, 0] == -1e6
        assert "floored" in table.flags


class TestMsfe:
    def test_bias_becomes_squared_bias(self):
        b = 0.7
        actuals = np.zeros(200)
        ens, cfg = _gaussian_ensemble(b, 1e-9, actuals, n_comp=4)
        table = msfe(ens, _values_for(cfg, actuals, 1))
        assert table.mean[1][0] == pytest.approx(b**2, rel=1e-6)


class TestPit:
    def test_uniform_under_correct_model(self):
        rng = np.random.default_rng(23)
        actuals = rng.standard_normal(400)
        ens, cfg = _gaussian_ensemble(0.0, 1.0, actuals, n_comp=2000, seed=1)
        res = pit(ens, _values_for(cfg, actuals, 1))
        u, counts = res[1]
        chi2 = np.sum((counts[:, 0] - 40.0) ** 2 / 40.0)
        p = stats.chi2.sf(chi2, df=9)
        assert p > 0.01

    def test_detects_overconfident_model(self):
        rng = np.random.default_rng(24)
        actuals = 2.0 * rng.standard_normal(400)  # truth is wider than forecast
        ens, cfg = _gaussian_ensemble(0.0, 1.0, actuals, n_comp=2000, seed=2)
        res = pit(ens, _values_for(cfg, actuals, 1))
        _, counts = res[1]
        chi2 = np.sum((counts[:, 0] - 40.0) ** 2 / 40.0)
        assert stats.chi2.sf(chi2, df=9) < 0.01


class TestBayesFactors:
    def test_running_sum_and_sign(self):
        lp_a = np.array([0.0, 0.0, 0.0])
        lp_b = np.array([1.0, -0.5, 2.0])
        out = cum_log_bf(lp_a, lp_b)
        assert np.allclose(out, [1.0, 0.5, 2.5])
        with pytest.raises(ValueError):
            cum_log_bf(np.zeros(3), np.zeros(4))


class TestDieboldMariano:
    def test_long_run_variance_of_ma1(self):
        # d_t = mu + e_t + theta e_{t-1}: long-run variance (1 + theta)^2
        theta, mu, n = 0.5, 0.05, 10_000
        rng = np.random.default_rng(25)
        e = rng.standard_normal(n + 1)
        d = mu + e[1:] + theta * e[:-1]
        horizon = 25  # long Bartlett window so the kernel bias is negligible
        stat, p = dm_test_nw(d, horizon)
        s_implied = n * (d.mean() / stat) ** 2
        assert s_implied == pytest.approx((1 + theta) ** 2, rel=0.10)

    def test_one_sided_direction(self):
        rng = np.random.default_rng(26)
        d = 0.5 + rng.standard_normal(500)
        stat, p = dm_test_nw(d, 1)
        assert stat > 0 and p < 0.01
        stat2, p2 = dm_test_nw(-d, 1)
        assert p2 > 0.99

    def test_degenerate_and_short_series(self):
        stat, p = dm_test_nw(np.full(100, 0.3), 1)
        assert np.isnan(stat) and p == 1.0
        with pytest.raises(ValueError):
            dm_test_nw(np.ones(5), 4)

    def test_stars(self):
        assert dm_stars(0.005) == "***"
        assert dm_stars(0.02) == "**"
        assert dm_stars(0.07) == "*"
        assert dm_stars(0.5) == ""
        assert dm_stars(float("nan")) == ""


class TestPredictiveSimulation:
    def _setup(self, family="mst", sv=True, k=2):
        spec = ModelSpec(family=family, sv=sv, p=1, k=k)
        params = ParameterDraw(
            B=np.hstack([np.zeros((k, 1)), 0.5 * np.eye(k)]),
            a=np.full(spec.n_a, 0.3),
            gamma=np.full(k, 0.4) if spec.family.has_skew else np.zeros(k),
            nu=np.full(spec.n_mix, 8.0),
            sigma2=np.full(k, 0.02 if sv else 0.0),
            logh0=np.zeros(k),
        )
        latents = LatentPaths(xi=np.ones((5, spec.n_mix)), logh=np.zeros((5, k)))
        values = np.tile(np.array([0.5, -0.5]), (10, 1))[:, :k]
        return spec, params, latents, values

    def test_one_step_mean_and_rao_blackwell_consistency(self):
        # the h=1 predictive mean must converge to B x_T plus the skew offset
        spec, params, latents, values = self._setup()
        rng = np.random.default_rng(30)
        d, m, v, expl = simulate_predictive(spec, params, latents, values, 1, rng,
                                            n_paths=40_000)
        x = np.concatenate([[1.0], values[-1]])
        base = params.B @ x
        skew_mean = params.gamma * 8.0 / 6.0  # E[xi] = nu/(nu-2)
        assert np.allclose(d.mean(axis=0), base + skew_mean, atol=0.03)
        # Rao-Blackwell identity: the draw means equal the conditional means
        # on average, and each draw is one sample from its own conditional
        assert np.allclose(m.mean(axis=0), base + skew_mean, atol=0.03)
        assert not expl
        assert np.all(v > 0)

    def test_explosive_flag(self):
        spec, params, latents, values = self._setup(family="gaussian", sv=False)
        object.__setattr__(params, "B", np.hstack([np.zeros((2, 1)), 30.0 * np.eye(2)]))
        rng = np.random.default_rng(31)
        d, m, v, expl = simulate_predictive(spec, params, latents, values, 10, rng)
        assert expl

    def test_shared_mixing_uses_one_draw_per_period(self):
        spec, params, latents, values = self._setup(family="student-t")
        rng = np.random.default_rng(32)
        d, m, v, expl = simulate_predictive(spec, params, latents, values, 1, rng,
                                            n_paths=5000)
        assert d.shape == (5000, 2)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ForecastConfig(origin_start=10, sample_end=10)
        with pytest.raises(ValueError):
            ForecastConfig(origin_start=5, sample_end=10, horizons=(0,))
        cfg = ForecastConfig(origin_start=5, sample_end=10, horizons=(1, 3))
        assert np.array_equal(cfg.origins(3), [5, 6, 7])


class TestRecursiveForecast:
    def test_expanding_window_smoke_and_determinism(self):
        spec = ModelSpec(family="gaussian", sv=False, p=1, k=2)
        rng = np.random.default_rng(33)
        vals = rng.standard_normal((40, 2)).cumsum(axis=0) * 0.1
        data = Dataset(
            names=("y1", "y2"),
            dates=tuple(f"{2000 + t // 12:04d}-{t % 12 + 1:02d}" for t in range(40)),
            values=vals,
        )
        cfg = ForecastConfig(origin_start=30, sample_end=40, horizons=(1, 3), n_paths=2)
        e1 = recursive_forecast(spec, data, cfg, n_draws=120, n_burn=40, seed=4)
        e2 = recursive_forecast(spec, data, cfg, n_draws=120, n_burn=40, seed=4)
        assert e1.draws[1].shape == (10, 160, 2)
        assert e1.draws[3].shape == (8, 160, 2)
        assert np.array_equal(e1.draws[1], e2.draws[1])
        table = msfe(e1, data.values)
        assert set(table.mean) == {1, 3}
        assert np.all(np.isfinite(table.mean[1]))

    def test_sample_end_beyond_data(self):
        spec = ModelSpec(family="gaussian", sv=False, p=1, k=1)
        data = Dataset(
            names=("y",), dates=tuple(f"2000-{m + 1:02d}" for m in range(10)),
            values=np.random.default_rng(0).standard_normal((10, 1)),
        )
        cfg = ForecastConfig(origin_start=8, sample_end=15, horizons=(1,))
        with pytest.raises(ValueError):
            recursive_forecast(spec, data, cfg, n_draws=50, n_burn=10)
