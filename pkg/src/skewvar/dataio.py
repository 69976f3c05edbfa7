"""Data ingestion, run configuration and persistence of posterior draws.

CSV files are expected to carry a header row whose first column holds
monthly dates in YYYY-MM form.  Draw files use a self-describing binary
layout: magic bytes, a JSON header (format version, model, prior, seed,
shapes) and little-endian float64 array sections in a fixed order, so a
round trip is bit-exact.
"""

from __future__ import annotations

import configparser
import json
import re
import struct
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from skewvar.datamodel import Dataset, ModelSpec, PriorSpec
from skewvar.forecast import ForecastConfig
from skewvar.gibbs import PosteriorDraws

DRAWS_MAGIC = b"SVDRAWS1"
DRAWS_VERSION = 1

TRANSFORMS = ("level", "log", "log-diff")

_DATE_RE = re.compile(r"^(\d{4})-(\d{2})$")


class DataFormatError(ValueError):
    """The input file violates the expected layout or value constraints."""


class ConfigError(ValueError):
    """The run configuration is incomplete or inconsistent."""


def _check_dates(dates, path: str) -> tuple:
    out = []
    for idx, d in enumerate(dates):
        s = str(d).strip()
        m = _DATE_RE.match(s)
        if not m or not (1 <= int(m.group(2)) <= 12):
            raise DataFormatError(
                f"{path}: row {idx + 2}: date {s!r} is not in YYYY-MM form"
            )
        out.append(s)
    return tuple(out)


def load_csv(path: str, selection=None, transforms=None) -> Dataset:
    """Read a monthly CSV and apply per-variable transforms.

    ``selection`` names the variables to keep (default: all non-date
    columns); ``transforms`` maps name -> one of 'level', 'log',
    'log-diff'.  A log-difference drops the first row for every variable
    so the sample stays aligned.
    """
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataFormatError(f"{path}: cannot read CSV: {exc}") from exc
    if frame.shape[1] < 2:
        raise DataFormatError(f"{path}: need a date column plus at least one series")
    date_col = frame.columns[0]
    dates = _check_dates(frame[date_col], path)
    names = tuple(selection) if selection else tuple(frame.columns[1:])
    for name in names:
        if name not in frame.columns:
            raise DataFormatError(f"{path}: no column named {name!r}")
    transforms = dict(transforms or {})
    for name, tr in transforms.items():
        if tr not in TRANSFORMS:
            raise ConfigError(f"unknown transform {tr!r} for {name!r}")
    tags = tuple(transforms.get(name, "level") for name in names)

    cols = []
    for name in names:
        raw = pd.to_numeric(frame[name], errors="coerce").to_numpy(dtype=float)
        missing = np.where(~np.isfinite(raw))[0]
        if missing.size:
            raise DataFormatError(
                f"{path}: column {name!r}: missing or non-numeric value at row "
                f"{missing[0] + 2}"
            )
        cols.append(raw)
    values = np.column_stack(cols)

    any_diff = any(t == "log-diff" for t in tags)
    out = np.empty((values.shape[0] - (1 if any_diff else 0), len(names)))
    for j, (name, tr) in enumerate(zip(names, tags)):
        col = values[:, j]
        if tr in ("log", "log-diff"):
            bad = np.where(col <= 0)[0]
            if bad.size:
                raise DataFormatError(
                    f"{path}: column {name!r}: non-positive value {col[bad[0]]!r} "
                    f"at row {bad[0] + 2} cannot be logged"
                )
            col = np.log(col)
        if tr == "log-diff":
            col = np.diff(col)
        elif any_diff:
            col = col[1:]
        out[:, j] = col
    kept_dates = dates[1:] if any_diff else dates
    return Dataset(names=names, dates=kept_dates, values=out, transforms=tags)


# ---------------------------------------------------------------------------
# draw persistence


def _spec_to_json(spec: ModelSpec) -> dict:
    return {"family": spec.family.value, "sv": spec.sv, "p": spec.p, "k": spec.k}


def _prior_to_json(prior: PriorSpec) -> dict:
    return {
        "b0": prior.b0.tolist(),
        "Vb0": prior.Vb0.tolist(),
        "l1": prior.l1,
        "l2": prior.l2,
        "Va": prior.Va,
        "nu_shape": prior.nu_shape,
        "nu_rate": prior.nu_rate,
        "Vgamma": prior.Vgamma,
        "Vsigma": prior.Vsigma,
        "h0_mean": None if prior.h0_mean is None else prior.h0_mean.tolist(),
        "h0_var": prior.h0_var,
    }


def prior_from_json(obj: dict) -> PriorSpec:
    return PriorSpec(
        b0=np.asarray(obj["b0"]),
        Vb0=np.asarray(obj["Vb0"]),
        l1=obj["l1"],
        l2=obj["l2"],
        Va=obj["Va"],
        nu_shape=obj["nu_shape"],
        nu_rate=obj["nu_rate"],
        Vgamma=obj["Vgamma"],
        Vsigma=obj["Vsigma"],
        h0_mean=None if obj["h0_mean"] is None else np.asarray(obj["h0_mean"]),
        h0_var=obj["h0_var"],
    )


_ARRAY_ORDER = ("B", "a", "gamma", "nu", "sigma2", "logh0", "xi", "logh")


def save_draws(draws: PosteriorDraws, path: str, prior: PriorSpec = None) -> None:
    """Write a posterior sample to a self-describing binary file."""
    arrays = {}
    for name in _ARRAY_ORDER:
        arr = getattr(draws, name)
        if arr is None:
            continue
        arrays[name] = np.ascontiguousarray(arr, dtype="<f8")
    header = {
        "version": DRAWS_VERSION,
        "spec": _spec_to_json(draws.spec),
        "prior": None if prior is None else _prior_to_json(prior),
        "seed": draws.seed,
        "n_draws": draws.n_draws,
        "acceptance": draws.acceptance,
        "arrays": {name: list(arr.shape) for name, arr in arrays.items()},
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(DRAWS_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in _ARRAY_ORDER:
            if name in arrays:
                fh.write(arrays[name].tobytes())


def load_draws(path: str, expect_spec: ModelSpec = None) -> tuple[PosteriorDraws, PriorSpec]:
    """Read a draw file back; optionally verify it matches an expected model."""
    with open(path, "rb") as fh:
        magic = fh.read(len(DRAWS_MAGIC))
        if magic != DRAWS_MAGIC:
            raise DataFormatError(f"{path}: not a draws file (bad magic bytes)")
        raw_len = fh.read(8)
        if len(raw_len) < 8:
            raise DataFormatError(f"{path}: truncated header length")
        (blob_len,) = struct.unpack("<Q", raw_len)
        blob = fh.read(blob_len)
        if len(blob) < blob_len:
            raise DataFormatError(f"{path}: truncated header block")
        header = json.loads(blob.decode("utf-8"))
        if header.get("version") != DRAWS_VERSION:
            raise DataFormatError(
                f"{path}: format version {header.get('version')!r}, expected {DRAWS_VERSION}"
            )
        spec = ModelSpec(**header["spec"])
        if expect_spec is not None and spec != expect_spec:
            raise DataFormatError(
                f"{path}: file holds {spec.label} draws, expected {expect_spec.label}"
            )
        arrays = {}
        for name, shape in header["arrays"].items():
            count = int(np.prod(shape))
            buf = fh.read(count * 8)
            if len(buf) < count * 8:
                raise DataFormatError(f"{path}: truncated array section {name!r}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    draws = PosteriorDraws(
        spec=spec,
        B=arrays["B"],
        a=arrays["a"],
        gamma=arrays["gamma"],
        nu=arrays["nu"],
        sigma2=arrays["sigma2"],
        logh0=arrays["logh0"],
        xi=arrays.get("xi"),
        logh=arrays.get("logh"),
        acceptance=header.get("acceptance") or {},
        seed=header.get("seed"),
    )
    prior = None if header["prior"] is None else prior_from_json(header["prior"])
    return draws, prior


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything one CLI invocation needs, parsed from an INI file."""

    data_path: str = None
    variables: tuple = ()
    transforms: dict = field(default_factory=dict)
    family: str = "gaussian"
    sv: bool = False
    p: int = 1
    k: int = None
    n_draws: int = 20_000
    n_burn: int = 5_000
    thin: int = 1
    seed: int = None
    keep_latents: bool = True
    origin_start: int = None
    sample_end: int = None
    horizons: tuple = (1, 3, 6, 12)
    n_paths: int = 1
    lml_n: int = 20_000
    lml_route: str = "A1"
    output_dir: str = "."
    prior_overrides: dict = field(default_factory=dict)

    def model_spec(self, k: int = None) -> ModelSpec:
        dim = k if k is not None else (self.k or len(self.variables))
        if not dim:
            raise ConfigError("cannot infer the model dimension k")
        return ModelSpec(family=self.family, sv=self.sv, p=self.p, k=dim)

    def forecast_config(self) -> ForecastConfig:
        if self.origin_start is None or self.sample_end is None:
            raise ConfigError("forecasting needs origin_start and sample_end")
        return ForecastConfig(
            origin_start=self.origin_start,
            sample_end=self.sample_end,
            horizons=self.horizons,
            n_paths=self.n_paths,
        )


def _get(cp, section, key, cast, default=None):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            return cp.getboolean(section, key)
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from exc


def load_config(path: str) -> RunConfig:
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    cfg = RunConfig()
    if cp.has_section("data"):
        cfg.data_path = _get(cp, "data", "path", str)
        raw_vars = _get(cp, "data", "variables", str, "")
        cfg.variables = tuple(v.strip() for v in raw_vars.split(",") if v.strip())
        for name in cfg.variables:
            tr = _get(cp, "data", f"transform_{name}", str, "level")
            cfg.transforms[name] = tr
    if cp.has_section("model"):
        cfg.family = _get(cp, "model", "family", str, cfg.family)
        cfg.sv = _get(cp, "model", "sv", bool, cfg.sv)
        cfg.p = _get(cp, "model", "p", int, cfg.p)
        cfg.k = _get(cp, "model", "k", int, cfg.k)
    if cp.has_section("mcmc"):
        cfg.n_draws = _get(cp, "mcmc", "n_draws", int, cfg.n_draws)
        cfg.n_burn = _get(cp, "mcmc", "n_burn", int, cfg.n_burn)
        cfg.thin = _get(cp, "mcmc", "thin", int, cfg.thin)
        cfg.seed = _get(cp, "mcmc", "seed", int, cfg.seed)
        cfg.keep_latents = _get(cp, "mcmc", "keep_latents", bool, cfg.keep_latents)
    if cp.has_section("forecast"):
        cfg.origin_start = _get(cp, "forecast", "origin_start", int, cfg.origin_start)
        cfg.sample_end = _get(cp, "forecast", "sample_end", int, cfg.sample_end)
        raw_h = _get(cp, "forecast", "horizons", str, None)
        if raw_h:
            try:
                cfg.horizons = tuple(int(v) for v in raw_h.split(",") if v.strip())
            except ValueError as exc:
                raise ConfigError(f"[forecast] horizons = {raw_h!r}: {exc}") from exc
        cfg.n_paths = _get(cp, "forecast", "n_paths", int, cfg.n_paths)
    if cp.has_section("lml"):
        cfg.lml_n = _get(cp, "lml", "n", int, cfg.lml_n)
        cfg.lml_route = _get(cp, "lml", "route", str, cfg.lml_route)
        if cfg.lml_route not in ("A1", "A2"):
            raise ConfigError(f"[lml] route must be A1 or A2, got {cfg.lml_route!r}")
    if cp.has_section("output"):
        cfg.output_dir = _get(cp, "output", "dir", str, cfg.output_dir)
    if cp.has_section("prior"):
        for key in cp.options("prior"):
            cfg.prior_overrides[key] = _get(cp, "prior", key, float)
    try:
        ModelSpec(family=cfg.family, sv=cfg.sv, p=cfg.p, k=cfg.k or 1)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def apply_prior_overrides(prior: PriorSpec, overrides: dict) -> PriorSpec:
    """Rebuild a PriorSpec with scalar hyperparameters replaced."""
    allowed = {"l1", "l2", "va", "nu_shape", "nu_rate", "vgamma", "vsigma", "h0_var"}
    canon = {"va": "Va", "vgamma": "Vgamma", "vsigma": "Vsigma"}
    kwargs = {
        "b0": prior.b0, "Vb0": prior.Vb0, "l1": prior.l1, "l2": prior.l2,
        "Va": prior.Va, "nu_shape": prior.nu_shape, "nu_rate": prior.nu_rate,
        "Vgamma": prior.Vgamma, "Vsigma": prior.Vsigma,
        "h0_mean": prior.h0_mean, "h0_var": prior.h0_var,
    }
    for key, val in overrides.items():
        low = key.lower()
        if low not in allowed:
            raise ConfigError(f"unknown prior override {key!r}")
        kwargs[canon.get(low, low)] = val
    return PriorSpec(**kwargs)
