"""Demand history container and the GP feature encoders.

Layouts (columns in order)::

    electric: year sin/cos, month sin/cos, week sin/cos, workday, temp,
              6 lags (oldest first), q05, q50, q95                  -> 17
    heat:     same time block, temp, irradiance,
              12 lags (oldest first), q05, q50, q95                 -> 24

Quantiles use the nearest-rank definition over the trailing 168 hours.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HOURS_PER_YEAR = 8766.0  # 365.25 d
HOURS_PER_MONTH = HOURS_PER_YEAR / 12.0
HOURS_PER_WEEK = 168.0
QUANTILE_WINDOW = 168
QUANTILES = (5.0, 50.0, 95.0)
N_TIME = 7

KINDS = ("electric", "heat")


@dataclass(frozen=True)
class FeatureLayout:
    kind: str
    n_lags: int
    with_irradiance: bool

    @property
    def dim(self) -> int:
        return N_TIME + 1 + int(self.with_irradiance) + self.n_lags + len(QUANTILES)

    @property
    def names(self) -> list[str]:
        out = ["year_sin", "year_cos", "month_sin", "month_cos", "week_sin", "week_cos",
               "workday", "temp"]
        if self.with_irradiance:
            out.append("irradiance")
        out += [f"lag{l}" for l in range(self.n_lags, 0, -1)]
        out += [f"q{int(q):02d}" for q in QUANTILES]
        return out

    @property
    def lag_slice(self) -> slice:
        start = N_TIME + 1 + int(self.with_irradiance)
        return slice(start, start + self.n_lags)

    def default_linear_dims(self) -> tuple[int, ...]:
        """Temperature, irradiance (heat) and the lag block."""
        names = self.names
        dims = [names.index("temp")]
        if self.with_irradiance:
            dims.append(names.index("irradiance"))
        dims += list(range(self.lag_slice.start, self.lag_slice.stop))
        return tuple(dims)

    @property
    def history_needed(self) -> int:
        return max(QUANTILE_WINDOW, self.n_lags)


ELECTRIC = FeatureLayout("electric", 6, False)
HEAT = FeatureLayout("heat", 12, True)


def layout_for(kind: str) -> FeatureLayout:
    if kind == "electric":
        return ELECTRIC
    if kind == "heat":
        return HEAT
    raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")


@dataclass(frozen=True)
class DemandHistory:
    """Contiguous hourly demand and weather series.

    ``timestamps`` are ``datetime64[h]``; demands in kWh per hour, ``temp``
    in degrees C, ``irradiance`` in kW/m2.
    """

    timestamps: np.ndarray
    L_e: np.ndarray
    L_h: np.ndarray
    temp: np.ndarray
    irradiance: np.ndarray
    holidays: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        ts = np.asarray(self.timestamps).astype("datetime64[h]")
        object.__setattr__(self, "timestamps", ts)
        for name in ("L_e", "L_h", "temp", "irradiance"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.shape != ts.shape:
                raise ValueError(f"{name} length {a.shape} differs from timestamps {ts.shape}")
            object.__setattr__(self, name, a)
        if len(ts) > 1 and not (np.diff(ts.astype(np.int64)) == 1).all():
            raise ValueError("timestamps must be strictly increasing hourly without gaps")
        if (self.L_e < 0).any() or (self.L_h < 0).any():
            raise ValueError("demands must be nonnegative")
        hol = frozenset(np.datetime64(d, "D") for d in self.holidays)
        object.__setattr__(self, "holidays", hol)

    def __len__(self) -> int:
        return len(self.timestamps)

    def demand(self, kind: str) -> np.ndarray:
        return self.L_e if layout_for(kind).kind == "electric" else self.L_h

    def index_of(self, ts) -> int:
        ts = np.datetime64(ts, "h")
        k = int((ts - self.timestamps[0]).astype(np.int64))
        if not 0 <= k < len(self):
            raise KeyError(f"{ts} outside history [{self.timestamps[0]}, {self.timestamps[-1]}]")
        return k

    def slice(self, start: int, stop: int) -> "DemandHistory":
        return DemandHistory(self.timestamps[start:stop], self.L_e[start:stop],
                             self.L_h[start:stop], self.temp[start:stop],
                             self.irradiance[start:stop], self.holidays)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["timestamp", "L_e_kwh", "L_h_kwh", "temp_c", "irradiance_kw_m2"])
            for i in range(len(self)):
                w.writerow([str(self.timestamps[i]) + ":00", repr(float(self.L_e[i])),
                            repr(float(self.L_h[i])), repr(float(self.temp[i])),
                            repr(float(self.irradiance[i]))])

    @classmethod
    def from_csv(cls, path, holidays: Sequence = ()) -> "DemandHistory":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        need = {"timestamp", "L_e_kwh", "L_h_kwh", "temp_c", "irradiance_kw_m2"}
        if rows and not need <= set(rows[0]):
            raise ValueError(f"history CSV needs columns {sorted(need)}")
        ts = np.array([np.datetime64(r["timestamp"], "h") for r in rows], dtype="datetime64[h]")
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        return cls(ts, col("L_e_kwh"), col("L_h_kwh"), col("temp_c"),
                   col("irradiance_kw_m2"), frozenset(holidays))


def read_holidays(path) -> frozenset:
    """One ISO date per line (optional header ``date``)."""
    out = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and line.lower() != "date":
                out.add(np.datetime64(line, "D"))
    return frozenset(out)


def time_encoding(timestamps, holidays: frozenset = frozenset()) -> np.ndarray:
    """(n, 7) sin/cos for year, month and week periods plus workday flag."""
    ts = np.atleast_1d(np.asarray(timestamps).astype("datetime64[h]"))
    h = ts.astype(np.int64).astype(float)
    cols = []
    for period in (HOURS_PER_YEAR, HOURS_PER_MONTH, HOURS_PER_WEEK):
        ang = 2.0 * np.pi * h / period
        cols += [np.sin(ang), np.cos(ang)]
    days = ts.astype("datetime64[D]")
    weekday = (days.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday
    work = weekday < 5
    if holidays:
        work &= ~np.isin(days, np.array(sorted(holidays), dtype="datetime64[D]"))
    cols.append(work.astype(float))
    return np.column_stack(cols)


def nearest_rank_quantiles(window: np.ndarray, qs=QUANTILES) -> np.ndarray:
    """Nearest-rank percentiles along the last axis."""
    n = window.shape[-1]
    s = np.sort(window, axis=-1)
    ranks = [max(1, int(np.ceil(q / 100.0 * n))) - 1 for q in qs]
    return s[..., ranks]


def assemble(layout: FeatureLayout, tenc: np.ndarray, temp, irr, window: np.ndarray) -> np.ndarray:
    """Feature rows from time encodings, weather and trailing demand windows.

    ``window`` has shape (n, 168) with the most recent hour last.
    """
    window = np.atleast_2d(window)
    n = window.shape[0]
    if window.shape[1] != QUANTILE_WINDOW:
        raise ValueError(f"demand window must hold {QUANTILE_WINDOW} hours")
    tenc = np.broadcast_to(np.atleast_2d(tenc), (n, N_TIME))
    parts = [tenc, np.broadcast_to(np.asarray(temp, dtype=float), (n,))[:, None]]
    if layout.with_irradiance:
        parts.append(np.broadcast_to(np.asarray(irr, dtype=float), (n,))[:, None])
    parts.append(window[:, -layout.n_lags:])
    parts.append(nearest_rank_quantiles(window))
    return np.hstack(parts)


def _check_coverage(history: DemandHistory, ks: np.ndarray, layout: FeatureLayout):
    if len(ks) == 0:
        return
    first, last = int(ks.min()), int(ks.max())
    if first - layout.history_needed < 0:
        t0 = history.timestamps[0] if len(history) else "?"
        raise ValueError(
            f"insufficient history for {layout.kind} features at hour index {first}: need "
            f"{layout.history_needed} h before it (from index {first - layout.history_needed}),"
            f" history starts at index 0 ({t0})")
    if last >= len(history):
        raise ValueError(f"hour index {last} beyond history end (length {len(history)})")


def feature_matrix(history: DemandHistory, kind: str, ks) -> np.ndarray:
    """Feature rows for target hours ``ks`` using only real history."""
    layout = layout_for(kind)
    ks = np.atleast_1d(np.asarray(ks, dtype=np.int64))
    _check_coverage(history, ks, layout)
    L = history.demand(kind)
    idx = ks[:, None] + np.arange(-QUANTILE_WINDOW, 0)[None, :]
    windows = L[idx]
    tenc = time_encoding(history.timestamps[ks], history.holidays)
    return assemble(layout, tenc, history.temp[ks], history.irradiance[ks], windows)


def encode_electric(k: int, history: DemandHistory) -> np.ndarray:
    return feature_matrix(history, "electric", [k])[0]


def encode_heat(k: int, history: DemandHistory) -> np.ndarray:
    return feature_matrix(history, "heat", [k])[0]


SEASONS = ("winter", "spring", "summer", "autumn")
DEFAULT_SEASON_OF_MONTH = {12: "winter", 1: "winter", 2: "winter", 3: "spring", 4: "spring",
                           5: "spring", 6: "summer", 7: "summer", 8: "summer", 9: "autumn",
                           10: "autumn", 11: "autumn"}


def month_of(ts) -> int:
    m = np.datetime64(ts, "M").astype(np.int64) % 12
    return int(m) + 1


def select_seasonal_model(date, table: dict[int, str] | None = None) -> str:
    table = DEFAULT_SEASON_OF_MONTH if table is None else table
    return table[month_of(date)]


def season_mask(timestamps, season: str, table: dict[int, str] | None = None) -> np.ndarray:
    table = DEFAULT_SEASON_OF_MONTH if table is None else table
    months = (np.asarray(timestamps).astype("datetime64[M]").astype(np.int64) % 12) + 1
    wanted = [m for m, s in table.items() if s == season]
    return np.isin(months, wanted)
