"""Run configuration: one TOML file with versioned sections.

Schema (version 1)::

    schema_version = 1

    [data]        start, end, seed (required) + any SyntheticDataConfig field
    [hub]         optional HubParameters overrides
    [tariffs]     buy, sell, gas (CHF/kWh constants) or csv = "path"
    [train]       train_end (required), seasons, window_hours, n_fit, restarts,
                  max_iter, seed
    [forecast]    origin (required), M, T, seed, quartile_start, quartile_end
    [simulate]    start, hours (required), controllers, M, T, seed,
                  window_hours, refresh_every, rho, mode, backend, epigraph,
                  terminal_weight
    [guarantee]   beta (required), alpha, rel_tol

A section is only validated when a command reads it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

try:
    import tomllib as tomli
except ModuleNotFoundError:  # Python 3.10
    import tomli

from .features import SEASONS
from .hub_model import HubParameters, Tariffs
from .synthetic import SyntheticDataConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Missing or malformed configuration (usage error)."""


REQUIRED = {
    "data": ("start", "end", "seed"),
    "train": ("train_end",),
    "forecast": ("origin",),
    "simulate": ("start", "hours"),
    "guarantee": ("beta",),
}


@dataclass(frozen=True)
class TrainConfig:
    train_end: str
    seasons: tuple[str, ...] = SEASONS
    window_hours: int = 28 * 24
    n_fit: int = 600
    restarts: int = 3
    max_iter: int = 200
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seasons", tuple(self.seasons))
        bad = set(self.seasons) - set(SEASONS)
        if bad:
            raise ConfigError(f"train.seasons: unknown season(s) {sorted(bad)}")


@dataclass(frozen=True)
class ForecastConfig:
    origin: str
    M: int = 50
    T: int = 24
    seed: int = 0
    window_hours: int = 28 * 24
    quartile_start: str | None = None
    quartile_end: str | None = None


@dataclass(frozen=True)
class SimulateConfig:
    start: str
    hours: int
    controllers: tuple[str, ...] = ("pd_mpc", "scenario")
    M: tuple[int, ...] = (1, 3, 10, 50)
    T: int = 24
    seed: int = 0
    window_hours: int = 28 * 24
    refresh_every: int = 24
    rho: float | None = None
    mode: str = "relax_first"
    backend: str = "highs"
    epigraph: bool = False
    terminal_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "controllers", tuple(self.controllers))
        object.__setattr__(self, "M", tuple(int(m) for m in np.atleast_1d(self.M)))


@dataclass(frozen=True)
class GuaranteeSection:
    beta: float
    alpha: float = 0.9
    rel_tol: float = 1e-6


@dataclass
class RunConfig:
    raw: dict
    path: str | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def section(self, name: str) -> dict:
        if name not in self.raw:
            raise ConfigError(f"missing config section [{name}]")
        sec = self.raw[name]
        for key in REQUIRED.get(name, ()):
            if key not in sec:
                raise ConfigError(f"missing config key '{name}.{key}'")
        return dict(sec)

    def data(self) -> SyntheticDataConfig:
        return _make(SyntheticDataConfig, self.section("data"), "data")

    def hub(self) -> HubParameters:
        return _make(HubParameters, dict(self.raw.get("hub", {})), "hub")

    def tariffs(self, n_hours: int, timestamps=None) -> Tariffs:
        t = dict(self.raw.get("tariffs", {}))
        if "csv" in t:
            return read_tariff_csv(t["csv"], timestamps)
        unknown = set(t) - {"buy", "sell", "gas"}
        if unknown:
            raise ConfigError(f"unknown tariffs key(s): {sorted(unknown)}")
        try:
            return Tariffs.constant(n_hours, **t)
        except ValueError as err:
            raise ConfigError(f"tariffs: {err}") from err

    def train(self) -> TrainConfig:
        return _make(TrainConfig, self.section("train"), "train")

    def forecast(self) -> ForecastConfig:
        return _make(ForecastConfig, self.section("forecast"), "forecast")

    def simulate(self) -> SimulateConfig:
        return _make(SimulateConfig, self.section("simulate"), "simulate")

    def guarantee(self) -> GuaranteeSection:
        return _make(GuaranteeSection, self.section("guarantee"), "guarantee")


def _make(cls, d: dict, section: str):
    known = {f.name for f in fields(cls) if not f.name.startswith("_")}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}")
    try:
        return cls(**d)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{section}]: {err}") from err


def parse_config(raw: dict, path: str | None = None) -> RunConfig:
    if "schema_version" not in raw:
        raise ConfigError("missing config key 'schema_version'")
    if raw["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {raw['schema_version']} "
                          f"(expected {SCHEMA_VERSION})")
    return RunConfig(raw, path)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"config file {path} is not valid TOML: {err}") from err
    return parse_config(raw, str(path))


def read_tariff_csv(path, timestamps=None) -> Tariffs:
    """``timestamp,price_buy,price_sell,price_gas``; aligned to ``timestamps`` if given."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"timestamp", "price_buy", "price_sell", "price_gas"} <= set(rows[0]):
        raise ConfigError(f"tariff CSV {path} needs timestamp,price_buy,price_sell,price_gas")
    ts = np.array([np.datetime64(r["timestamp"], "h") for r in rows])
    cols = {k: np.array([float(r[k]) for r in rows]) for k in ("price_buy", "price_sell",
                                                               "price_gas")}
    if timestamps is not None:
        idx = ((np.asarray(timestamps).astype("datetime64[h]") - ts[0]).astype(np.int64))
        if idx.min() < 0 or idx.max() >= len(ts):
            raise ConfigError(f"tariff CSV {path} does not cover the data range")
        cols = {k: v[idx] for k, v in cols.items()}
    return Tariffs(cols["price_buy"], cols["price_sell"], cols["price_gas"])
