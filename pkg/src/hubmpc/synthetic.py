"""Synthetic building demand and weather, a stand-in for metered data.

Electric load::

    L_e = base_e * (1 + daily + weekly) * (weekend_factor on weekends) + noise_e

Heat load::

    L_h = base_h * (1 + daily_h) + temp_sensitivity * max(0, t_ref - T) + noise_h

Both noises are stationary AR(1) Gaussian processes; results are clipped at 0.
Temperature is an annual sinusoid (coldest mid January) with a daily swing
and AR(1) weather noise. Irradiance is a clear-sky bell over the daylight
window scaled by a seasonal peak and a random cloud factor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from .features import DemandHistory


@dataclass(frozen=True)
class SyntheticDataConfig:
    start: str = "2018-01-01T00"
    end: str = "2019-03-01T00"
    base_e: float = 170.0
    daily_amp_e: float = 0.30
    weekly_amp_e: float = 0.05
    weekend_factor: float = 0.75
    base_h: float = 60.0
    daily_amp_h: float = 0.25
    temp_sensitivity: float = 11.0
    t_ref: float = 18.0
    noise_std_e: float = 8.0
    noise_std_h: float = 12.0
    noise_ar: float = 0.7
    temp_mean: float = 10.0
    temp_annual_amp: float = 10.0
    temp_daily_amp: float = 4.0
    temp_noise_std: float = 2.0
    temp_noise_ar: float = 0.95
    irr_peak_summer: float = 0.85
    irr_peak_winter: float = 0.30
    cloud_mean: float = 0.7
    cloud_std: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if np.datetime64(self.end, "h") <= np.datetime64(self.start, "h"):
            raise ValueError("end must be after start")
        for name in ("noise_std_e", "noise_std_h", "temp_noise_std", "cloud_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not -1.0 < self.noise_ar < 1.0 or not -1.0 < self.temp_noise_ar < 1.0:
            raise ValueError("AR coefficients must lie in (-1, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticDataConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synthetic-data key(s): {sorted(unknown)}")
        return cls(**d)


def _ar1(rng, n, phi, std):
    z = rng.standard_normal(n)
    out = np.empty(n)
    prev = z[0] * std if n else 0.0
    scale = std * np.sqrt(1.0 - phi * phi)
    for i in range(n):
        prev = phi * prev + scale * z[i] if i else prev
        out[i] = prev
    return out


def generate_synthetic_data(cfg: SyntheticDataConfig) -> DemandHistory:
    ts = np.arange(np.datetime64(cfg.start, "h"), np.datetime64(cfg.end, "h"))
    n = len(ts)
    rng = np.random.default_rng(cfg.seed)
    hours = ts.astype(np.int64).astype(float)
    hod = hours % 24.0
    days = ts.astype("datetime64[D]")
    doy = (days - days.astype("datetime64[Y]")).astype(np.int64).astype(float)
    weekday = (days.astype(np.int64) + 3) % 7
    weekend = weekday >= 5

    temp = (cfg.temp_mean - cfg.temp_annual_amp * np.cos(2 * np.pi * (doy - 15.0) / 365.25)
            + cfg.temp_daily_amp * np.sin(2 * np.pi * (hod - 9.0) / 24.0)
            + _ar1(rng, n, cfg.temp_noise_ar, cfg.temp_noise_std))

    half_day = 6.0 + 2.5 * np.cos(2 * np.pi * (doy - 172.0) / 365.25)
    season_w = 0.5 * (1 + np.cos(2 * np.pi * (doy - 172.0) / 365.25))
    peak = cfg.irr_peak_winter + (cfg.irr_peak_summer - cfg.irr_peak_winter) * season_w
    bell = np.clip(np.cos(0.5 * np.pi * (hod - 12.0) / half_day), 0.0, None)
    bell[np.abs(hod - 12.0) >= half_day] = 0.0
    daily_cloud = np.clip(cfg.cloud_mean + cfg.cloud_std * rng.standard_normal(n // 24 + 2),
                          0.05, 1.0)
    cloud = daily_cloud[((hours - hours[0]) // 24).astype(int)] if n else daily_cloud[:0]
    irr = peak * bell * cloud

    daily_e = np.sin(2 * np.pi * (hod - 8.0) / 24.0)
    weekly_e = np.cos(2 * np.pi * hours / 168.0)
    L_e = cfg.base_e * (1.0 + cfg.daily_amp_e * daily_e + cfg.weekly_amp_e * weekly_e)
    L_e = L_e * np.where(weekend, cfg.weekend_factor, 1.0)
    L_e = L_e + _ar1(rng, n, cfg.noise_ar, cfg.noise_std_e)

    daily_h = np.cos(2 * np.pi * (hod - 6.0) / 24.0)
    L_h = (cfg.base_h * (1.0 + cfg.daily_amp_h * daily_h)
           + cfg.temp_sensitivity * np.maximum(0.0, cfg.t_ref - temp)
           + _ar1(rng, n, cfg.noise_ar, cfg.noise_std_h))
    return DemandHistory(ts, np.maximum(L_e, 0.0), np.maximum(L_h, 0.0), temp, irr)
