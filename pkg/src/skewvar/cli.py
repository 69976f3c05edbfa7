"""Command-line interface: simulate | estimate | lml | forecast | evaluate | compare.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure.  Every stochastic command requires a seed (from the config file
or the --seed flag) so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from skewvar.datamodel import (
    Dataset,
    ErrorFamily,
    InsufficientDataError,
    ModelSpec,
    ParameterDraw,
    default_prior,
)
from skewvar.dataio import (
    ConfigError,
    DataFormatError,
    apply_prior_overrides,
    load_config,
    load_csv,
    load_draws,
    save_draws,
)
from skewvar.forecast import (
    crps_mc,
    cum_log_bf,
    dm_stars,
    dm_test_nw,
    lp_rao_blackwell,
    msfe,
    pit,
    recursive_forecast,
)
from skewvar.gibbs import SamplerNumericalError, run_chain
from skewvar.ml import EvidenceNumericalError, estimate_lml
from skewvar.report import (
    acceptance_rows,
    cum_bf_figure,
    ensure_dir,
    metric_rows,
    pit_figure,
    write_table,
)
from skewvar.simulate import UnstableCoefficientsError, simulate_dataset

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _default_true_params(spec: ModelSpec) -> ParameterDraw:
    """A stable, mildly skewed data generating process for demonstrations."""
    k = spec.k
    B = np.zeros((k, spec.n_coef))
    if spec.p >= 1:
        for i in range(k):
            B[i, 1 + i] = 0.5
    a = np.full(spec.n_a, 0.3)
    gamma = (
        np.array([0.8, 0.0, -0.5][:k] + [0.2] * max(0, k - 3))
        if spec.family.has_skew
        else np.zeros(k)
    )
    nu = np.full(spec.n_mix, 8.0) if spec.family.has_mixing else np.full(spec.n_mix, 1e6)
    sigma2 = np.full(k, 0.05 if spec.sv else 0.0)
    return ParameterDraw(B=B, a=a, gamma=gamma, nu=nu, sigma2=sigma2, logh0=np.zeros(k))


def _require_seed(cfg_seed, arg_seed) -> int:
    seed = arg_seed if arg_seed is not None else cfg_seed
    if seed is None:
        raise ConfigError("a seed is required (config [mcmc] seed or --seed)")
    return int(seed)


def _load_dataset(cfg) -> Dataset:
    if not cfg.data_path:
        raise ConfigError("no dataset path configured ([data] path)")
    return load_csv(cfg.data_path, cfg.variables or None, cfg.transforms)


def _write_csv_dataset(data: Dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *data.names])
        for t in range(data.T):
            writer.writerow([data.dates[t], *(f"{v:.10g}" for v in data.values[t])])


def cmd_simulate(args) -> int:
    spec = ModelSpec(family=args.family, sv=args.sv, p=args.p, k=args.k)
    params = _default_true_params(spec)
    data, latents = simulate_dataset(spec, params, args.T, seed=args.seed)
    _write_csv_dataset(data, args.out)
    print(f"wrote {data.T} x {data.k} simulated {spec.label} dataset to {args.out}")
    return EXIT_OK


def _prepare(args):
    cfg = load_config(args.config)
    data = _load_dataset(cfg)
    spec = cfg.model_spec(k=data.k)
    prior = default_prior(spec, data)
    if cfg.prior_overrides:
        prior = apply_prior_overrides(prior, cfg.prior_overrides)
    return cfg, data, spec, prior


def cmd_estimate(args) -> int:
    cfg, data, spec, prior = _prepare(args)
    seed = _require_seed(cfg.seed, args.seed)
    draws = run_chain(
        spec, prior, data,
        n_draws=cfg.n_draws, n_burn=cfg.n_burn, thin=cfg.thin,
        seed=seed, keep_latents=cfg.keep_latents,
    )
    ensure_dir(cfg.output_dir)
    out = args.out or os.path.join(cfg.output_dir, f"{spec.label.lower()}.draws")
    save_draws(draws, out, prior=prior)
    acc_path = os.path.splitext(out)[0] + ".acceptance.csv"
    write_table(acc_path, ["model", "step", "acceptance"], acceptance_rows(spec.label, draws.acceptance))
    print(f"saved {draws.n_draws} draws to {out}")
    for step, rate in sorted(draws.acceptance.items()):
        print(f"  acceptance[{step}] = {rate:.4f}")
    return EXIT_OK


def cmd_lml(args) -> int:
    cfg, data, spec, prior = _prepare(args)
    seed = _require_seed(cfg.seed, args.seed)
    draws, saved_prior = load_draws(args.draws, expect_spec=spec)
    if saved_prior is not None:
        prior = saved_prior
    rng = np.random.default_rng(seed + 1)
    res = estimate_lml(spec, prior, data, draws, N=cfg.lml_n, rng=rng, route=cfg.lml_route)
    ensure_dir(cfg.output_dir)
    out = args.out or os.path.join(cfg.output_dir, f"{spec.label.lower()}.lml.csv")
    rec = res.record()
    write_table(
        out,
        ["family", "sv", "logml", "se", "ess", "n_used", "flags"],
        [[rec["family"], rec["sv"], f"{rec['logml']:.4f}", f"{rec['se']:.4f}",
          f"{rec['ess']:.1f}", rec["n_used"], ";".join(rec["flags"])]],
    )
    print(f"{spec.label}: log ML = {res.logml:.3f} (se {res.se:.3f}, ESS {res.ess:.0f}, "
          f"N {res.n_used}{', ' + ','.join(res.flags) if res.flags else ''})")
    return EXIT_OK


def _run_forecast(cfg, data, spec, prior, seed):
    fc = cfg.forecast_config()
    return recursive_forecast(
        spec, data, fc,
        n_draws=cfg.n_draws, n_burn=cfg.n_burn, thin=cfg.thin,
        seed=seed, prior=None,
    ), fc


def cmd_forecast(args) -> int:
    cfg, data, spec, prior = _prepare(args)
    seed = _require_seed(cfg.seed, args.seed)
    ens, fc = _run_forecast(cfg, data, spec, prior, seed)
    ensure_dir(cfg.output_dir)
    out = args.out or os.path.join(cfg.output_dir, f"{spec.label.lower()}.forecast.csv")
    rows = []
    for h in sorted(ens.draws):
        origins = fc.origins(h)
        yd = ens.draws[h]
        qs = np.quantile(yd, [0.05, 0.5, 0.95], axis=1)
        for j, origin in enumerate(origins):
            for i, name in enumerate(data.names):
                rows.append([
                    spec.label, name, int(origin), h,
                    f"{yd[j, :, i].mean():.6g}",
                    f"{qs[0, j, i]:.6g}", f"{qs[1, j, i]:.6g}", f"{qs[2, j, i]:.6g}",
                    int(ens.explosive[h][j]),
                ])
    write_table(
        out,
        ["model", "variable", "origin", "horizon", "mean", "q05", "q50", "q95", "explosive"],
        rows,
    )
    print(f"wrote predictive summaries to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg, data, spec, prior = _prepare(args)
    seed = _require_seed(cfg.seed, args.seed)
    base_spec = ModelSpec(family=args.baseline_family, sv=spec.sv, p=spec.p, k=spec.k)
    ens, fc = _run_forecast(cfg, data, spec, prior, seed)
    base_prior = default_prior(base_spec, data)
    ens_b, _ = _run_forecast(cfg, data, base_spec, base_prior, seed)
    values = data.values

    table_m = msfe(ens, values)
    table_lp = lp_rao_blackwell(ens, values)
    table_c = crps_mc(ens, values)
    base_m = msfe(ens_b, values)
    base_lp = lp_rao_blackwell(ens_b, values)
    base_c = crps_mc(ens_b, values)

    ensure_dir(cfg.output_dir)
    rows = []
    for h in sorted(table_m.mean):
        for i, name in enumerate(data.names):
            ratio = table_m.mean[h][i] / base_m.mean[h][i]
            d_sq = base_m.per_origin[h][:, i] - table_m.per_origin[h][:, i]
            _, p_m = dm_test_nw(d_sq, h)
            d_lp = table_lp.per_origin[h][:, i] - base_lp.per_origin[h][:, i]
            _, p_l = dm_test_nw(d_lp, h)
            d_c = base_c.per_origin[h][:, i] - table_c.per_origin[h][:, i]
            _, p_c = dm_test_nw(d_c, h)
            rows.append([spec.label, name, h, "msfe_ratio",
                         f"{ratio:.4f}", dm_stars(p_m)])
            rows.append([spec.label, name, h, "lp_diff",
                         f"{table_lp.mean[h][i] - base_lp.mean[h][i]:+.4f}", dm_stars(p_l)])
            rows.append([spec.label, name, h, "crps_improvement",
                         f"{(base_c.mean[h][i] - table_c.mean[h][i]):+.4f}", dm_stars(p_c)])
    out = args.out or os.path.join(cfg.output_dir, f"{spec.label.lower()}.metrics.csv")
    write_table(out, ["model", "variable", "horizon", "metric", "value", "stars"], rows)

    pit_res = pit(ens, values)
    pit_path = os.path.join(cfg.output_dir, f"{spec.label.lower()}.pit.png")
    pit_figure(pit_res, data.names, pit_path)
    bf_series = {}
    for h in sorted(table_lp.per_origin):
        joint_b = base_lp.per_origin[h].sum(axis=1)
        joint_m = table_lp.per_origin[h].sum(axis=1)
        bf_series[h] = cum_log_bf(joint_b, joint_m)
    bf_path = os.path.join(cfg.output_dir, f"{spec.label.lower()}.cumlogbf.png")
    cum_bf_figure(bf_series, base_spec.label, spec.label, bf_path)
    bf_rows = [
        [spec.label, base_spec.label, h, t, f"{v:.6g}"]
        for h, series in sorted(bf_series.items())
        for t, v in enumerate(series)
    ]
    write_table(
        os.path.join(cfg.output_dir, f"{spec.label.lower()}.cumlogbf.csv"),
        ["model", "baseline", "horizon", "origin_index", "cum_log_bf"],
        bf_rows,
    )
    print(f"wrote metric table to {out}")
    print(f"wrote figures to {pit_path} and {bf_path}")
    return EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for path in args.records:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                sv = rec["sv"] in ("True", "true", "1")
                label = ModelSpec(family=rec["family"], sv=sv, p=1, k=1).label
                rows.append([label, rec["logml"], rec["se"], rec.get("flags", "")])
    if not rows:
        raise DataFormatError("no log marginal likelihood records found")
    rows.sort(key=lambda r: -float(r[1]))
    write_table(args.out, ["model", "logml", "se", "flags"], rows)
    best = rows[0]
    for model, logml, se, flags in rows:
        bf = float(best[1]) - float(logml)
        print(f"{model:>14s}  logml {float(logml):9.2f} +/- {float(se):.2f}"
              f"   log BF vs best {bf:6.2f} {flags}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skewvar",
        description="Bayesian VARs with skewed, heavy-tailed errors and stochastic volatility",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write a synthetic dataset as CSV")
    sim.add_argument("--family", default="mst", choices=[f.value for f in ErrorFamily])
    sim.add_argument("--sv", action="store_true")
    sim.add_argument("--k", type=int, default=3)
    sim.add_argument("--p", type=int, default=1)
    sim.add_argument("--T", type=int, default=300)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    for name, fn, extra in (
        ("estimate", cmd_estimate, ()),
        ("lml", cmd_lml, ("draws",)),
        ("forecast", cmd_forecast, ()),
        ("evaluate", cmd_evaluate, ()),
    ):
        cmd = sub.add_parser(name, help=f"{name} using a run configuration")
        cmd.add_argument("--config", required=True)
        cmd.add_argument("--seed", type=int, default=None)
        cmd.add_argument("--out", default=None)
        if "draws" in extra:
            cmd.add_argument("--draws", required=True, help="posterior draw file")
        if name == "evaluate":
            cmd.add_argument("--baseline-family", default="gaussian",
                             choices=[f.value for f in ErrorFamily])
        cmd.set_defaults(func=fn)

    comp = sub.add_parser("compare", help="join log marginal likelihood records")
    comp.add_argument("records", nargs="+")
    comp.add_argument("--out", required=True)
    comp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataFormatError, InsufficientDataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerNumericalError, EvidenceNumericalError,
            UnstableCoefficientsError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
