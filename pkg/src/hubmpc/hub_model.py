"""Energy hub physics: converters, storages, balances and stage cost.

Storage flow naming. The storage update used here is

    level' = gamma * level + eta * charge * dt - discharge * dt / eta

and the balances count ``discharge - charge`` on the supply side. In the
classic in/out notation for this hub, ``discharge`` is the flow labelled
"in" (it enters the hub bus) and ``charge`` is the flow labelled "out"
(it leaves the bus towards the storage). Everything in this package uses
the charge/discharge names to avoid that trap.

Grid exchange is named ``grid_buy`` (import, priced at ``price_buy``) and
``grid_sell`` (export, remunerated at ``price_sell``).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

CHP_VERTICES = ("A", "B", "C", "D")
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class HubParameters:
    """Converter and storage data for the hub (defaults: the reference hub).

    Powers in kW, energies in kWh, efficiencies unitless.
    """

    chp_p: tuple[float, float, float, float] = (120.0, 106.0, 252.0, 305.0)
    chp_q: tuple[float, float, float, float] = (0.0, 171.0, 408.0, 0.0)
    eta_chp: float = 0.36
    cop: float = 4.5
    eta_gb: float = 0.78
    eta_pv: float = 0.15
    a_pv: float = 3000.0
    p_pv_min: float = 0.0
    p_pv_max: float = 400.0
    # Not tabulated for the reference hub; the vertex hull already confines the CHP.
    p_chp_min: float = 0.0
    p_chp_max: float = 305.0
    q_chp_min: float = 0.0
    q_chp_max: float = 408.0
    q_hp_min: float = 0.0
    q_hp_max: float = 120.0
    q_gb_min: float = 0.0
    q_gb_max: float = 120.0
    eta_es: float = 0.95
    gamma_es: float = 0.999
    es_min: float = 40.0
    es_max: float = 250.0
    eta_ts: float = 0.99
    gamma_ts: float = 0.992
    ts_min: float = 0.0
    ts_max: float = 4800.0

    def __post_init__(self):
        object.__setattr__(self, "chp_p", tuple(float(v) for v in self.chp_p))
        object.__setattr__(self, "chp_q", tuple(float(v) for v in self.chp_q))
        self.validate()

    def validate(self) -> None:
        if len(self.chp_p) != 4 or len(self.chp_q) != 4:
            raise ValueError("CHP needs exactly 4 vertices (A, B, C, D)")
        for name in ("eta_chp", "eta_gb", "eta_pv", "eta_es", "eta_ts"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1]")
        for name in ("gamma_es", "gamma_ts"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name}={v} must lie in (0, 1]")
        if self.cop <= 0.0:
            raise ValueError(f"cop={self.cop} must be positive")
        if self.a_pv < 0.0:
            raise ValueError("a_pv must be nonnegative")
        for lo, hi in (
            ("p_pv_min", "p_pv_max"),
            ("p_chp_min", "p_chp_max"),
            ("q_chp_min", "q_chp_max"),
            ("q_hp_min", "q_hp_max"),
            ("q_gb_min", "q_gb_max"),
            ("es_min", "es_max"),
            ("ts_min", "ts_max"),
        ):
            if getattr(self, lo) > getattr(self, hi):
                raise ValueError(f"{lo} > {hi}")
        for p in self.chp_p:
            if not self.p_chp_min <= p <= self.p_chp_max:
                raise ValueError(f"CHP vertex P={p} outside [p_chp_min, p_chp_max]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["chp_p"] = list(self.chp_p)
        d["chp_q"] = list(self.chp_q)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "HubParameters":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown hub parameter(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class Tariffs:
    """Hourly price series in CHF/kWh, indexed by absolute hour."""

    price_buy: np.ndarray
    price_sell: np.ndarray
    price_gas: np.ndarray

    def __post_init__(self):
        arrs = []
        for name in ("price_buy", "price_sell", "price_gas"):
            a = np.asarray(getattr(self, name), dtype=float).copy()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrs.append(a)
        if not (arrs[0].shape == arrs[1].shape == arrs[2].shape) or arrs[0].ndim != 1:
            raise ValueError("tariff series must be 1-D and equally long")
        if any((a < 0).any() for a in arrs):
            raise ValueError("prices must be nonnegative")
        if (self.price_sell > self.price_buy).any():
            raise ValueError("price_sell must not exceed price_buy")

    @classmethod
    def constant(cls, n_hours: int, buy: float = 0.20, sell: float = 0.06,
                 gas: float = 0.11) -> "Tariffs":
        return cls(np.full(n_hours, buy), np.full(n_hours, sell), np.full(n_hours, gas))

    def __len__(self) -> int:
        return len(self.price_buy)

    def window(self, k: int, T: int) -> "Tariffs":
        """Prices for hours k..k+T-1."""
        if k < 0 or k + T > len(self):
            raise ValueError(f"tariffs cover hours [0, {len(self)}), need [{k}, {k + T})")
        return Tariffs(self.price_buy[k:k + T], self.price_sell[k:k + T], self.price_gas[k:k + T])


@dataclass(frozen=True)
class HubState:
    es_level: float
    ts_level: float
    clock: int = 0

    def check(self, params: HubParameters, tol: float = 1e-6) -> None:
        if not params.es_min - tol <= self.es_level <= params.es_max + tol:
            raise ValueError(f"es_level={self.es_level} outside storage bounds")
        if not params.ts_min - tol <= self.ts_level <= params.ts_max + tol:
            raise ValueError(f"ts_level={self.ts_level} outside storage bounds")

    @classmethod
    def initial(cls, params: HubParameters, clock: int = 0) -> "HubState":
        return cls(params.es_min, 0.5 * (params.ts_min + params.ts_max), clock)


@dataclass
class SetPoints:
    """Shared (scenario independent) decisions, one entry per step."""

    p_pv: np.ndarray
    chp_weights: np.ndarray  # (T, 4)
    p_chp: np.ndarray
    q_chp: np.ndarray
    f_chp: np.ndarray
    p_hp: np.ndarray
    q_hp: np.ndarray
    q_gb: np.ndarray
    f_gb: np.ndarray
    es_discharge: np.ndarray
    es_charge: np.ndarray
    es_level: np.ndarray  # level after each step

    @property
    def horizon(self) -> int:
        return len(self.p_pv)

    def step(self, k: int) -> "SetPoints":
        """Length-1 slice at step k."""
        return SetPoints(**{f.name: np.asarray(getattr(self, f.name))[k:k + 1].copy()
                            for f in fields(self)})

    def as_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, f.name)) for f in fields(self)])

    def to_dict(self) -> dict:
        return {f.name: np.asarray(getattr(self, f.name)).tolist() for f in fields(self)}


@dataclass
class RecourseVariables:
    """Per-scenario decisions, one entry per step."""

    grid_buy: np.ndarray
    grid_sell: np.ndarray
    ts_discharge: np.ndarray
    ts_charge: np.ndarray
    ts_level: np.ndarray

    def to_dict(self) -> dict:
        return {f.name: np.asarray(getattr(self, f.name)).tolist() for f in fields(self)}


def chp_output(weights, params: HubParameters) -> tuple[float, float, float]:
    """Electric output, heat output and gas input of the CHP for vertex weights."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (4,):
        raise ValueError("need 4 CHP vertex weights")
    if (w < -SIMPLEX_TOL).any() or abs(w.sum() - 1.0) > SIMPLEX_TOL:
        raise ValueError(f"CHP weights {w} are not on the simplex")
    p = float(w @ np.asarray(params.chp_p))
    q = float(w @ np.asarray(params.chp_q))
    return p, q, p / params.eta_chp


def hp_gb_output(p_hp: float, f_gb: float, params: HubParameters) -> tuple[float, float]:
    if p_hp < 0 or f_gb < 0:
        raise ValueError("heat pump and boiler inputs must be nonnegative")
    return params.cop * p_hp, params.eta_gb * f_gb


def pv_output(irradiance, params: HubParameters):
    """Available PV ceiling in kW; dispatch may curtail below it."""
    irr = np.asarray(irradiance, dtype=float)
    if (irr < 0).any():
        raise ValueError("irradiance must be nonnegative")
    out = np.minimum(params.eta_pv * irr * params.a_pv, params.p_pv_max)
    return float(out) if out.ndim == 0 else out


def storage_step(level, inflow, outflow, eta, gamma, dt=1.0):
    """One storage update with the hub's printed sign convention.

    ``inflow`` is the flow entering the hub bus (storage discharge),
    ``outflow`` the flow leaving the bus into the storage (charge).
    """
    if np.any(np.asarray(inflow) < 0) or np.any(np.asarray(outflow) < 0):
        raise ValueError("storage flows must be nonnegative")
    return gamma * level + eta * outflow * dt - inflow * dt / eta


def balance_residuals(sp: SetPoints, rc: RecourseVariables, L_e: float, L_h: float,
                      k: int) -> tuple[float, float]:
    """Supply minus demand for the electric and thermal bus at step k."""
    supply_e = (sp.p_pv[k] + sp.p_chp[k] - sp.p_hp[k]
                + (rc.grid_buy[k] - rc.grid_sell[k])
                + (sp.es_discharge[k] - sp.es_charge[k]))
    supply_h = (sp.q_gb[k] + sp.q_chp[k] + sp.q_hp[k]
                + (rc.ts_discharge[k] - rc.ts_charge[k]))
    return float(supply_e - L_e), float(supply_h - L_h)


def stage_cost(sp: SetPoints, rc: RecourseVariables, tariffs: Tariffs, k: int,
               dt: float = 1.0) -> float:
    """Energy cost in CHF of step k (tariffs indexed relative to the plan)."""
    return float(dt * (tariffs.price_buy[k] * rc.grid_buy[k]
                       - tariffs.price_sell[k] * rc.grid_sell[k]
                       + tariffs.price_gas[k] * (sp.f_chp[k] + sp.f_gb[k])))


def total_cost(sp: SetPoints, rc: RecourseVariables, tariffs: Tariffs, dt: float = 1.0) -> float:
    return sum(stage_cost(sp, rc, tariffs, k, dt) for k in range(sp.horizon))


def zero_setpoints(T: int) -> SetPoints:
    z = lambda: np.zeros(T)  # noqa: E731
    w = np.zeros((T, 4))
    w[:, 0] = 1.0
    return SetPoints(z(), w, z(), z(), z(), z(), z(), z(), z(), z(), z(), z())


def zero_recourse(T: int) -> RecourseVariables:
    return RecourseVariables(*(np.zeros(T) for _ in range(5)))
