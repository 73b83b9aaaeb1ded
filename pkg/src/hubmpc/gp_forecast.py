"""One-step Gaussian-process demand predictors.

Kernel: ARD squared exponential on every input plus a linear kernel on a
subset of inputs. Inputs and targets are standardized with statistics
frozen at fit time; the prior mean is zero in standardized units.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from .features import (
    DemandHistory,
    feature_matrix,
    layout_for,
    season_mask,
)

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1
JITTER_START = 1e-10
JITTER_STOP = 1e-4

# log-space box for hyperparameter search (standardized units)
LOG_BOUNDS = {
    "signal": (math.log(1e-4), math.log(1e2)),
    "length": (math.log(1e-2), math.log(1e3)),
    "linear": (math.log(1e-6), math.log(1e2)),
    "noise": (math.log(1e-8), math.log(1e1)),
}


class FactorizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelHyperparameters:
    signal_variance: float
    lengthscales: np.ndarray
    linear_variances: np.ndarray
    noise_variance: float
    linear_dims: tuple[int, ...] = ()

    def __post_init__(self):
        ls = np.asarray(self.lengthscales, dtype=float)
        lv = np.asarray(self.linear_variances, dtype=float)
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "linear_variances", lv)
        object.__setattr__(self, "linear_dims", tuple(int(d) for d in self.linear_dims))
        if len(lv) != len(self.linear_dims):
            raise ValueError("one linear variance per linear dimension")
        if (self.signal_variance <= 0 or self.noise_variance <= 0 or (ls <= 0).any()
                or (lv <= 0).any()):
            raise ValueError("kernel hyperparameters must be strictly positive")
        if self.linear_dims and max(self.linear_dims) >= len(ls):
            raise ValueError("linear dimension index beyond input dimension")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    @classmethod
    def default(cls, dim: int, linear_dims=()) -> "KernelHyperparameters":
        linear_dims = tuple(linear_dims)
        return cls(1.0, np.full(dim, math.sqrt(dim)), np.full(len(linear_dims), 0.1), 0.1,
                   linear_dims)

    def to_log_vector(self) -> np.ndarray:
        return np.log(np.concatenate([[self.signal_variance], self.lengthscales,
                                      self.linear_variances, [self.noise_variance]]))

    def from_log_vector(self, theta: np.ndarray) -> "KernelHyperparameters":
        e = np.exp(theta)
        d, p = self.dim, len(self.linear_dims)
        return KernelHyperparameters(float(e[0]), e[1:1 + d], e[1 + d:1 + d + p],
                                     float(e[-1]), self.linear_dims)

    def log_bounds(self) -> list[tuple[float, float]]:
        d, p = self.dim, len(self.linear_dims)
        return ([LOG_BOUNDS["signal"]] + [LOG_BOUNDS["length"]] * d
                + [LOG_BOUNDS["linear"]] * p + [LOG_BOUNDS["noise"]])

    def to_dict(self) -> dict:
        return {"signal_variance": self.signal_variance,
                "lengthscales": self.lengthscales.tolist(),
                "linear_variances": self.linear_variances.tolist(),
                "noise_variance": self.noise_variance,
                "linear_dims": list(self.linear_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelHyperparameters":
        return cls(d["signal_variance"], d["lengthscales"], d["linear_variances"],
                   d["noise_variance"], d["linear_dims"])


def kernel_eval(x, x2, hp: KernelHyperparameters) -> float:
    x, x2 = np.asarray(x, dtype=float), np.asarray(x2, dtype=float)
    if x.shape != x2.shape or x.shape != (hp.dim,):
        raise ValueError(f"inputs must both have dimension {hp.dim}")
    return float(kernel_matrix(x[None], x2[None], hp)[0, 0])


def _rbf(X1, X2, hp):
    A = X1 / hp.lengthscales
    B = X2 / hp.lengthscales
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    np.maximum(sq, 0.0, out=sq)
    return hp.signal_variance * np.exp(-0.5 * sq)


def kernel_matrix(X1, X2, hp: KernelHyperparameters) -> np.ndarray:
    X1, X2 = np.atleast_2d(X1), np.atleast_2d(X2)
    if X1.shape[1] != hp.dim or X2.shape[1] != hp.dim:
        raise ValueError(f"inputs must have dimension {hp.dim}")
    K = _rbf(X1, X2, hp)
    if hp.linear_dims:
        ld = list(hp.linear_dims)
        K += (X1[:, ld] * hp.linear_variances) @ X2[:, ld].T
    return K


def kernel_diag(X, hp: KernelHyperparameters) -> np.ndarray:
    X = np.atleast_2d(X)
    out = np.full(len(X), hp.signal_variance)
    if hp.linear_dims:
        ld = list(hp.linear_dims)
        out += (X[:, ld] ** 2 * hp.linear_variances).sum(1)
    return out


def factorize(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K, with the jitter ladder if needed."""
    n = len(K)
    if n == 0:
        return np.zeros((0, 0)), 0.0
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    base = max(np.trace(K) / n, 1e-300)
    jitter = JITTER_START * base
    while jitter <= JITTER_STOP * base * (1 + 1e-12):
        try:
            L = cholesky(K + jitter * np.eye(n), lower=True, check_finite=False)
            log.info("Gram matrix needed jitter %.3e", jitter)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise FactorizationError("Gram matrix not positive definite even after maximal jitter")


def log_marginal_likelihood(hp: KernelHyperparameters, X, y, grad: bool = False):
    """LML of standardized data; gradient w.r.t. the log-hyperparameters."""
    n = len(y)
    K = kernel_matrix(X, X, hp)
    K[np.diag_indices(n)] += hp.noise_variance
    L, _ = factorize(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    if not grad:
        return lml
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    Krbf = _rbf(X, X, hp)
    P = W * Krbf
    g_signal = 0.5 * P.sum()
    Z = X / hp.lengthscales
    rs = P.sum(1)
    g_len = 0.5 * (2.0 * rs @ (Z * Z) - 2.0 * (Z * (P @ Z)).sum(0))
    if hp.linear_dims:
        XL = X[:, list(hp.linear_dims)]
        g_lin = 0.5 * hp.linear_variances * (XL * (W @ XL)).sum(0)
    else:
        g_lin = np.zeros(0)
    g_noise = 0.5 * hp.noise_variance * np.trace(W)
    return lml, np.concatenate([[g_signal], g_len, g_lin, [g_noise]])


def projected_grad_norm(theta, g, bounds) -> float:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    g = g.copy()
    g[(theta <= lo + 1e-10) & (g < 0)] = 0.0
    g[(theta >= hi - 1e-10) & (g > 0)] = 0.0
    return float(np.linalg.norm(g))


@dataclass
class FitInfo:
    lml: float
    grad_norm: float
    converged: bool
    restarts: int
    iterations: int


def fit_hyperparameters(X, y, init: KernelHyperparameters, restarts: int = 5,
                        max_iter: int = 200, gtol: float = 1e-5, seed: int = 0,
                        ) -> tuple[KernelHyperparameters, FitInfo]:
    """Maximize the LML over log-hyperparameters with restarts.

    Restart 0 starts at ``init``; the others perturb it with N(0, 1) noise in
    log space. Returns the best iterate and whether its projected gradient
    norm fell below ``gtol``.
    """
    rng = np.random.default_rng(seed)
    bounds = init.log_bounds()
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    def negf(theta):
        try:
            v, g = log_marginal_likelihood(init.from_log_vector(theta), X, y, grad=True)
        except FactorizationError:
            return 1e25, np.zeros_like(theta)
        return -v, -g

    best = None
    total_iter = 0
    theta0 = np.clip(init.to_log_vector(), lo, hi)
    for r in range(max(1, restarts)):
        start = theta0 if r == 0 else np.clip(theta0 + rng.normal(size=theta0.shape), lo, hi)
        res = minimize(negf, start, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_iter, "gtol": gtol * 1e-2, "ftol": 1e-15,
                                "maxcor": 20})
        total_iter += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    theta = best.x
    lml, g = log_marginal_likelihood(init.from_log_vector(theta), X, y, grad=True)
    gn = projected_grad_norm(theta, g, bounds)
    converged = gn < gtol
    if not converged:
        warnings.warn(f"GP hyperparameter fit stopped with gradient norm {gn:.2e}",
                      RuntimeWarning, stacklevel=2)
    return init.from_log_vector(theta), FitInfo(float(lml), gn, converged, restarts, total_iter)


@dataclass(frozen=True)
class Standardizer:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    @classmethod
    def fit(cls, X, y) -> "Standardizer":
        xs = X.std(0)
        ys = float(y.std())
        return cls(X.mean(0), np.where(xs > 1e-12, xs, 1.0), float(y.mean()),
                   ys if ys > 1e-12 else 1.0)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim), 0.0, 1.0)

    def x(self, X):
        return (np.atleast_2d(X) - self.x_mean) / self.x_scale

    def y(self, y):
        return (np.asarray(y) - self.y_mean) / self.y_scale

    def to_dict(self):
        return {"x_mean": self.x_mean.tolist(), "x_scale": self.x_scale.tolist(),
                "y_mean": self.y_mean, "y_scale": self.y_scale}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["x_mean"]), np.asarray(d["x_scale"]), d["y_mean"], d["y_scale"])


@dataclass(frozen=True)
class GPModel:
    """Conditioned one-step predictor (immutable; refresh returns a new one)."""

    kind: str
    season: str
    hp: KernelHyperparameters
    scaler: Standardizer
    X: np.ndarray  # raw conditioning inputs
    y: np.ndarray  # raw targets (kWh)
    window: tuple[int, int]  # [start, stop) row indices into the source history
    L: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    jitter: float = 0.0
    fit_info: FitInfo | None = None
    Linv: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.hp.dim

    @property
    def n(self) -> int:
        return len(self.y)


def condition(kind: str, season: str, hp: KernelHyperparameters, scaler: Standardizer,
              X, y, window: tuple[int, int], fit_info: FitInfo | None = None) -> GPModel:
    """Build a model from hyperparameters and a conditioning set."""
    X = np.atleast_2d(np.asarray(X, dtype=float)).reshape(-1, hp.dim)
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) != len(y):
        raise ValueError("conditioning inputs and targets differ in length")
    Xs, ys = scaler.x(X), scaler.y(y)
    K = kernel_matrix(Xs, Xs, hp) if len(y) else np.zeros((0, 0))
    K[np.diag_indices(len(y))] += hp.noise_variance
    L, jitter = factorize(K)
    alpha = cho_solve((L, True), ys, check_finite=False) if len(y) else np.zeros(0)
    Linv = solve_triangular(L, np.eye(len(y)), lower=True, check_finite=False) if len(y) else L
    return GPModel(kind, season, hp, scaler, X.copy(), y.copy(), tuple(window), L, alpha,
                   jitter, fit_info, Linv)


def posterior(model: GPModel, xstar, latent: bool = False):
    """Predictive mean and variance (kWh, kWh^2) at one or more inputs.

    With ``latent=False`` (default) the variance is that of an observed
    demand, i.e. it includes the noise variance; ``latent=True`` gives the
    noise-free function posterior.
    """
    xs = np.asarray(xstar, dtype=float)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    if xs.shape[1] != model.dim:
        raise ValueError(f"input dimension {xs.shape[1]} != model dimension {model.dim}")
    Z = model.scaler.x(xs)
    prior = kernel_diag(Z, model.hp)
    if model.n:
        Ks = kernel_matrix(Z, model.scaler.x(model.X), model.hp)
        mean_s = Ks @ model.alpha
        V = Ks @ model.Linv.T
        var_s = prior - (V * V).sum(1)
    else:
        mean_s = np.zeros(len(Z))
        var_s = prior
    if (var_s < -1e-8).any():
        log.warning("posterior variance clipped from %.3e", var_s.min())
    var_s = np.maximum(var_s, 0.0)
    if not latent:
        var_s = var_s + model.hp.noise_variance
    mean = model.scaler.y_mean + model.scaler.y_scale * mean_s
    var = model.scaler.y_scale ** 2 * var_s
    if single:
        return float(mean[0]), float(var[0])
    return mean, var


def refresh_conditioning_set(model: GPModel, new_X, new_y, rows: tuple[int, int]) -> GPModel:
    """Slide the conditioning window forward to end at ``rows[1]``.

    ``rows`` is the [start, stop) index range of ``new_X``/``new_y`` in the
    source history; it must touch or overlap the current window end. The
    window length and the hyperparameters stay fixed.
    """
    start, stop = rows
    w0, w1 = model.window
    new_X = np.atleast_2d(np.asarray(new_X, dtype=float))
    new_y = np.asarray(new_y, dtype=float).reshape(-1)
    if stop - start != len(new_y) or len(new_X) != len(new_y):
        raise ValueError("row range does not match the number of new rows")
    if start > w1:
        raise ValueError(f"new rows start at {start}, not contiguous with window end {w1}")
    if stop < w1:
        raise ValueError("new rows end before the current window end")
    size = w1 - w0
    allX = np.vstack([model.X, new_X[w1 - start:]])
    ally = np.concatenate([model.y, new_y[w1 - start:]])
    keep = slice(len(ally) - size, len(ally))
    return condition(model.kind, model.season, model.hp, model.scaler, allX[keep], ally[keep],
                     (stop - size, stop), model.fit_info)


def fit(history: DemandHistory, kind: str, season: str,
        init: KernelHyperparameters | None = None, *, train_range: tuple[int, int] | None = None,
        window_hours: int = 90 * 24, n_fit: int = 600, restarts: int = 5,
        max_iter: int = 200, gtol: float = 1e-5, seed: int = 0,
        season_table: dict | None = None, linear_dims=None) -> GPModel:
    """Tune hyperparameters on a season's rows and condition on a window.

    Training rows are all hours in ``train_range`` whose month belongs to
    ``season`` and which have a full feature history; at most ``n_fit`` of
    them (seeded random subset) enter the likelihood. The returned model is
    conditioned on the last ``window_hours`` hours before ``train_range[1]``.
    """
    layout = layout_for(kind)
    lo, hi = train_range or (0, len(history))
    lo = max(lo, layout.history_needed)
    ks = np.arange(lo, hi)
    ks = ks[season_mask(history.timestamps[ks], season, season_table)]
    if len(ks) == 0:
        raise ValueError(f"no training rows for season {season!r} in rows [{lo}, {hi})")
    rng = np.random.default_rng(seed)
    if len(ks) > n_fit:
        ks = np.sort(rng.choice(ks, size=n_fit, replace=False))
    X = feature_matrix(history, kind, ks)
    y = history.demand(kind)[ks]
    scaler = Standardizer.fit(X, y)
    if linear_dims is None:
        linear_dims = layout.default_linear_dims()
    if init is None:
        init = KernelHyperparameters.default(layout.dim, linear_dims)
    hp, info = fit_hyperparameters(scaler.x(X), scaler.y(y), init, restarts, max_iter, gtol,
                                   seed)
    w1 = hi
    w0 = max(layout.history_needed, w1 - window_hours)
    if w1 - w0 < 1:
        raise ValueError("conditioning window is empty")
    kw = np.arange(w0, w1)
    return condition(kind, season, hp, scaler, feature_matrix(history, kind, kw),
                     history.demand(kind)[kw], (w0, w1), info)


def condition_on_history(model: GPModel, history: DemandHistory, stop: int,
                         window_hours: int | None = None) -> GPModel:
    """Same hyperparameters, conditioned on the window ending at ``stop``."""
    size = window_hours if window_hours is not None else model.window[1] - model.window[0]
    layout = layout_for(model.kind)
    start = max(layout.history_needed, stop - size)
    ks = np.arange(start, stop)
    return condition(model.kind, model.season, model.hp, model.scaler,
                     feature_matrix(history, model.kind, ks), history.demand(model.kind)[ks],
                     (start, stop), model.fit_info)


def save_model(model: GPModel, path, history: DemandHistory | None = None) -> None:
    d = {"format_version": MODEL_FORMAT_VERSION, "kind": model.kind, "season": model.season,
         "hyperparameters": model.hp.to_dict(), "standardizer": model.scaler.to_dict(),
         "window": list(model.window)}
    if history is not None:
        d["window_timestamps"] = [str(history.timestamps[model.window[0]]),
                                  str(history.timestamps[model.window[1] - 1])]
    if model.fit_info is not None:
        fi = model.fit_info
        d["fit"] = {"lml": fi.lml, "grad_norm": fi.grad_norm, "converged": fi.converged,
                    "restarts": fi.restarts, "iterations": fi.iterations}
    with open(path, "w") as fh:
        json.dump(d, fh, indent=2, sort_keys=True)


def load_model(path, history: DemandHistory) -> GPModel:
    """Rebuild a saved model, re-reading its conditioning rows from ``history``."""
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {d.get('format_version')}")
    hp = KernelHyperparameters.from_dict(d["hyperparameters"])
    scaler = Standardizer.from_dict(d["standardizer"])
    w0, w1 = d["window"]
    if "window_timestamps" in d:
        w0 = history.index_of(d["window_timestamps"][0])
        w1 = history.index_of(d["window_timestamps"][1]) + 1
    ks = np.arange(w0, w1)
    info = FitInfo(**d["fit"]) if "fit" in d else None
    return condition(d["kind"], d["season"], hp, scaler, feature_matrix(history, d["kind"], ks),
                     history.demand(d["kind"])[ks], (w0, w1), info)
