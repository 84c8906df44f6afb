"""Seeded synthetic 2x2 datasets with a known predictor -> precipitation relationship.

A latent field ``s`` evolves on a 2x2 torus. Each predictor at hour ``h`` is
a monotone transform of ``s[h - lag]`` (lag 0..2) plus optional noise, scaled
into a plausible physical range for its unit. Precipitation at hour ``h`` is
``softplus`` of ``s[h - lead]``, so the predictors at hour ``t`` determine tp
at ``t + lead`` exactly when the noise is switched off.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .datapipe import GRID, VARIABLES, GridSeriesDataset

DEFAULT_START = datetime(2011, 1, 1, tzinfo=timezone.utc)

# code: (lag hours, kind, offset, scale) where kind selects the monotone map
_PREDICTOR_MAPS = {
    "t250": (2, "linear", 230.0, 2.0),
    "t500": (1, "linear", 266.0, 2.5),
    "t850": (0, "linear", 292.0, -1.5),
    "rh250": (2, "logistic", 0.0, 100.0),
    "rh500": (0, "logistic", 0.0, 100.0),
    "rh850": (1, "logistic", 0.0, 100.0),
    "pv500": (1, "linear", 3.0e-7, 1.0e-7),
    "pv850": (0, "exp", 2.0e-7, 1.0e-7),
    "tcc": (0, "logistic", 0.0, 100.0),
    "hcc": (1, "logistic", 0.0, 100.0),
    "sp": (0, "linear", 100800.0, -250.0),
}
_MAX_LAG = 2


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    hours: int = 2000
    dynamics: str = "advection"
    signal_to_noise: float = 20.0
    lead: int = 6
    planted_correlations: dict = field(default_factory=dict)
    start_time: datetime = DEFAULT_START

    def __post_init__(self):
        if self.hours < 48:
            raise ValueError("synthetic datasets need at least 48 hours")
        if self.dynamics not in ("advection", "correlated-noise"):
            raise ValueError(f"unknown dynamics {self.dynamics!r}")
        if not (self.signal_to_noise >= 0) or math.isnan(self.signal_to_noise):
            raise ValueError("signal_to_noise must be >= 0 (inf for noise-free)")
        if self.lead < 1:
            raise ValueError("lead must be >= 1")
        for code, rho in self.planted_correlations.items():
            if code not in VARIABLES[:-1] or not -1 <= rho <= 1:
                raise ValueError(f"bad planted correlation {code}={rho}")


def _latent(cfg, rng, n):
    """Latent field of ``n`` hours on the 2x2 torus, roughly unit variance."""
    s = np.empty((n,) + GRID)
    s[0] = rng.standard_normal(GRID)
    rho = 0.95
    innov = math.sqrt(1.0 - rho * rho)
    if cfg.dynamics == "advection":
        # shift direction fixed per seed; mix keeps the field smooth
        axis = int(rng.integers(0, 2))
        mix = 0.6
        for t in range(1, n):
            moved = mix * s[t - 1] + (1.0 - mix) * np.roll(s[t - 1], 1, axis=axis)
            s[t] = rho * moved + innov * rng.standard_normal(GRID)
    else:
        cov = np.full((4, 4), 0.5) + 0.5 * np.eye(4)
        chol = np.linalg.cholesky(cov)
        for t in range(1, n):
            s[t] = rho * s[t - 1] + innov * (chol @ rng.standard_normal(4)).reshape(GRID)
    s -= s.mean()
    s /= s.std()
    return s


def _monotone(kind, z):
    if kind == "linear":
        return z
    if kind == "logistic":
        return 1.0 / (1.0 + np.exp(-1.2 * z))
    return np.exp(0.5 * z)


def precipitation(latent):
    """Shifted softplus of the latent field, in mm."""
    return 1.5 * np.logaddexp(0.0, 2.0 * (latent - 0.8))


def gen_advection(cfg):
    """Synthetic :class:`GridSeriesDataset` following ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    pad = max(_MAX_LAG, cfg.lead)
    total = cfg.hours + pad
    s = _latent(cfg, rng, total)
    hours = np.arange(pad, total)
    noisy = math.isfinite(cfg.signal_to_noise) and cfg.signal_to_noise > 0
    values = np.empty((cfg.hours, len(VARIABLES)) + GRID)
    for k, code in enumerate(VARIABLES[:-1]):
        lag, kind, offset, scale = _PREDICTOR_MAPS[code]
        signal = _monotone(kind, s[hours - lag])
        if noisy:
            signal = signal + rng.standard_normal(signal.shape) * (signal.std() / cfg.signal_to_noise)
        elif cfg.signal_to_noise == 0:
            signal = rng.standard_normal(signal.shape) * signal.std()
        if kind == "logistic":
            signal = np.clip(signal, 0.0, 1.0)
        values[:, k] = offset + scale * signal
    driver = s[hours - cfg.lead]
    if noisy:
        driver = driver + rng.standard_normal(driver.shape) / cfg.signal_to_noise
    values[:, -1] = precipitation(driver)
    if cfg.planted_correlations:
        tp_mean = values[:, -1].mean(axis=(1, 2))
        z = (tp_mean - tp_mean.mean()) / tp_mean.std()
        for code, rho in cfg.planted_correlations.items():
            k = VARIABLES.index(code)
            _, kind, offset, scale = _PREDICTOR_MAPS[code]
            series = rho * z + math.sqrt(1.0 - rho * rho) * rng.standard_normal(cfg.hours)
            if kind == "logistic":
                series = 1.0 / (1.0 + np.exp(-series))
            # magnitude only: the planted sign must survive a decreasing map like sp's
            values[:, k] = (offset + abs(scale) * series)[:, None, None]
    return GridSeriesDataset(cfg.start_time, values)


def gen_correlated_pair(seed, rho, n):
    """``x`` standard normal and ``y = rho*x + sqrt(1-rho^2)*z`` with independent ``z``."""
    if not -1 <= rho <= 1:
        raise ValueError("rho must lie in [-1, 1]")
    if n < 2:
        raise ValueError("n must be >= 2")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    z = rng.standard_normal(n)
    return x, rho * x + math.sqrt(1.0 - rho * rho) * z
