"""Recursive multi-step demand sampling from one-step GP predictors.

Each scenario runs its own chain: predict hour k+s from a feature vector
built over the trailing 168 h, where hours before k are real history and
hours from k on are that scenario's own earlier draws. Electricity and
heat chains are sampled independently.

Random numbers come from a Philox stream keyed by
``(seed, origin hour, chain, scenario id)``; the s-th draw is the s-th
normal of that stream. Output is therefore independent of evaluation
order or batching.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .features import QUANTILE_WINDOW, DemandHistory, assemble, layout_for, time_encoding
from .gp_forecast import GPModel, posterior

CHAINS = ("electric", "heat")


@dataclass(frozen=True)
class SamplerConfig:
    M: int = 10
    T: int = 24
    seed: int = 0
    antithetic: bool = False
    zero_variance: bool = False

    def __post_init__(self):
        if self.M < 1 or self.T < 1:
            raise ValueError("M and T must be at least 1")


@dataclass(frozen=True)
class Weather:
    """Exogenous inputs over the forecast horizon (taken as exact)."""

    temp: np.ndarray
    irradiance: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "temp", np.asarray(self.temp, dtype=float))
        object.__setattr__(self, "irradiance", np.asarray(self.irradiance, dtype=float))
        if self.temp.shape != self.irradiance.shape:
            raise ValueError("temperature and irradiance forecasts differ in length")

    def __len__(self):
        return len(self.temp)

    @classmethod
    def from_history(cls, history: DemandHistory, k: int, T: int) -> "Weather":
        if k + T > len(history):
            raise ValueError(f"weather needed for hours [{k}, {k + T}), history has {len(history)}")
        return cls(history.temp[k:k + T], history.irradiance[k:k + T])


@dataclass(frozen=True)
class TrajectorySample:
    L_e: np.ndarray
    L_h: np.ndarray
    index: int = 0


@dataclass
class ScenarioSet:
    """M sampled trajectories as (M, T) arrays."""

    L_e: np.ndarray
    L_h: np.ndarray
    clipped: int = 0
    features: dict[str, np.ndarray] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.L_e = np.atleast_2d(np.asarray(self.L_e, dtype=float))
        self.L_h = np.atleast_2d(np.asarray(self.L_h, dtype=float))
        if self.L_e.shape != self.L_h.shape:
            raise ValueError("electric and heat trajectories differ in shape")

    @property
    def M(self) -> int:
        return self.L_e.shape[0]

    @property
    def T(self) -> int:
        return self.L_e.shape[1]

    def __len__(self) -> int:
        return self.M

    def __iter__(self) -> Iterator[TrajectorySample]:
        for i in range(self.M):
            yield TrajectorySample(self.L_e[i], self.L_h[i], i)

    def subset(self, idx: Sequence[int]) -> "ScenarioSet":
        idx = np.asarray(idx, dtype=int)
        return ScenarioSet(self.L_e[idx].reshape(len(idx), self.T),
                           self.L_h[idx].reshape(len(idx), self.T))

    @classmethod
    def from_samples(cls, samples: Sequence[TrajectorySample]) -> "ScenarioSet":
        return cls(np.array([s.L_e for s in samples]), np.array([s.L_h for s in samples]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "step", "L_e_kwh", "L_h_kwh"])
            for i in range(self.M):
                for s in range(self.T):
                    w.writerow([i, s, repr(float(self.L_e[i, s])), repr(float(self.L_h[i, s]))])

    @classmethod
    def from_csv(cls, path) -> "ScenarioSet":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        M = max(int(r["scenario"]) for r in rows) + 1
        T = max(int(r["step"]) for r in rows) + 1
        Le, Lh = np.full((M, T), np.nan), np.full((M, T), np.nan)
        for r in rows:
            Le[int(r["scenario"]), int(r["step"])] = float(r["L_e_kwh"])
            Lh[int(r["scenario"]), int(r["step"])] = float(r["L_h_kwh"])
        if np.isnan(Le).any():
            raise ValueError("trajectory CSV has missing (scenario, step) cells")
        return cls(Le, Lh)


def scenario_normals(seed: int, origin: int, chain: int, ids: Sequence[int], T: int,
                     antithetic: bool = False) -> np.ndarray:
    """(len(ids), T) standard normals, one Philox stream per scenario."""
    out = np.empty((len(ids), T))
    for row, i in enumerate(ids):
        i = int(i)
        if antithetic:
            base, sign = i - (i % 2), (-1.0 if i % 2 else 1.0)
        else:
            base, sign = i, 1.0
        ss = np.random.SeedSequence([seed, origin, chain, base])
        out[row] = sign * np.random.Generator(np.random.Philox(ss)).standard_normal(T)
    return out


def _check_inputs(history: DemandHistory, k: int, weather: Weather, T: int):
    if k - QUANTILE_WINDOW < 0 or k > len(history):
        raise ValueError(f"need {QUANTILE_WINDOW} h of history before hour index {k} "
                         f"(rows [{k - QUANTILE_WINDOW}, {k})); history has {len(history)} rows")
    if len(weather) < T:
        raise ValueError(f"weather forecast covers {len(weather)} steps, horizon needs {T}")


def _horizon_timestamps(history: DemandHistory, k: int, T: int) -> np.ndarray:
    start = history.timestamps[k - 1] + np.timedelta64(1, "h")
    return start + np.arange(T).astype("timedelta64[h]")


def _run_chain(model: GPModel, history: DemandHistory, k: int, weather: Weather, T: int,
               z: np.ndarray | None, M: int, record: bool):
    layout = layout_for(model.kind)
    base = history.demand(model.kind)[k - QUANTILE_WINDOW:k]
    windows = np.tile(base, (M, 1))
    tenc = time_encoding(_horizon_timestamps(history, k, T), history.holidays)
    out = np.empty((M, T))
    feats = np.empty((M, T, layout.dim)) if record else None
    clipped = 0
    for s in range(T):
        X = assemble(layout, tenc[s], weather.temp[s], weather.irradiance[s], windows)
        if record:
            feats[:, s] = X
        mean, var = posterior(model, X)
        draw = mean if z is None else mean + np.sqrt(var) * z[:, s]
        neg = draw < 0
        clipped += int(neg.sum())
        draw = np.where(neg, 0.0, draw)
        out[:, s] = draw
        windows = np.concatenate([windows[:, 1:], draw[:, None]], axis=1)
    return out, clipped, feats


def sample_trajectories(models: Mapping[str, GPModel], history: DemandHistory, k: int,
                        weather: Weather, cfg: SamplerConfig,
                        scenario_ids: Sequence[int] | None = None,
                        record_features: bool = False) -> ScenarioSet:
    """Sample ``cfg.M`` joint (electric, heat) trajectories for hours k..k+T-1.

    Only rows of ``history`` before ``k`` are read. ``scenario_ids`` selects
    the RNG substreams (default ``range(M)``).
    """
    _check_inputs(history, k, weather, cfg.T)
    ids = np.arange(cfg.M) if scenario_ids is None else np.asarray(scenario_ids)
    if len(ids) != cfg.M:
        raise ValueError("need one scenario id per scenario")
    res, clipped, feats = {}, 0, {}
    for c, kind in enumerate(CHAINS):
        z = None if cfg.zero_variance else scenario_normals(cfg.seed, k, c, ids, cfg.T,
                                                            cfg.antithetic)
        res[kind], n_clip, feats[kind] = _run_chain(models[kind], history, k, weather, cfg.T, z,
                                                    cfg.M, record_features)
        clipped += n_clip
    return ScenarioSet(res["electric"], res["heat"], clipped,
                       feats if record_features else None)


def mean_trajectory(models: Mapping[str, GPModel], history: DemandHistory, k: int,
                    weather: Weather, T: int) -> TrajectorySample:
    """The recursion with every draw replaced by the predictive mean."""
    _check_inputs(history, k, weather, T)
    e, _, _ = _run_chain(models["electric"], history, k, weather, T, None, 1, False)
    h, _, _ = _run_chain(models["heat"], history, k, weather, T, None, 1, False)
    return TrajectorySample(e[0], h[0], 0)
