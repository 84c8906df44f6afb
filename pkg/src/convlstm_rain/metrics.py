"""Forecast verification (CC, NSE, NRMSE), predictor correlation matrix, per-grid reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datapipe import GRID, VARIABLES

# grid ids are numbered row-major over the 2x2 domain
GRID_CELLS = {1: (0, 0), 2: (0, 1), 3: (1, 0), 4: (1, 1)}
PHASES = ("training", "testing")
LEADS = (6, 12)


class UndefinedMetricError(ValueError):
    """The metric has no finite value for these inputs (e.g. a constant series)."""


def _pair(obs, pred):
    obs = np.asarray(obs, dtype=np.float64).ravel()
    pred = np.asarray(pred, dtype=np.float64).ravel()
    if obs.shape != pred.shape:
        raise ValueError(f"obs and pred differ in length: {obs.size} vs {pred.size}")
    if obs.size < 2:
        raise ValueError("need at least two paired values")
    if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(pred))):
        raise ValueError("obs and pred must be finite")
    return obs, pred


def pearson_cc(obs, pred):
    """Sample Pearson correlation between ``obs`` and ``pred``."""
    obs, pred = _pair(obs, pred)
    do = obs - obs.mean()
    dp = pred - pred.mean()
    sxx = float(np.dot(do, do))
    syy = float(np.dot(dp, dp))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedMetricError("correlation is undefined for a constant series")
    r = float(np.dot(do, dp)) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def nse(obs, pred):
    """Nash-Sutcliffe efficiency, ``1 - SSE / sum((obs - mean(obs))**2)``."""
    obs, pred = _pair(obs, pred)
    sst = float(np.sum((obs - obs.mean()) ** 2))
    if sst == 0.0:
        raise UndefinedMetricError("NSE is undefined for constant observations")
    return 1.0 - float(np.sum((pred - obs) ** 2)) / sst


def nrmse(obs, pred):
    """Root-mean-square error divided by the observed mean."""
    obs, pred = _pair(obs, pred)
    mean = float(obs.mean())
    if mean == 0.0:
        raise UndefinedMetricError("NRMSE is undefined when the observed mean is zero")
    return math.sqrt(float(np.mean((pred - obs) ** 2))) / mean


METRICS = {"cc": pearson_cc, "nse": nse, "nrmse": nrmse}


# --- predictor screening ------------------------------------------------------

@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    variables: tuple = VARIABLES
    undefined: tuple = ()

    def get(self, a, b):
        return float(self.values[self.variables.index(a), self.variables.index(b)])

    def to_csv(self):
        lines = ["variable," + ",".join(self.variables)]
        for code, row in zip(self.variables, self.values):
            lines.append(code + "," + ",".join("nan" if math.isnan(v) else repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def correlation_matrix(dataset, mode="mean"):
    """Pearson matrix over all variables of ``dataset``.

    ``mode="mean"`` correlates the per-hour spatial mean of each variable;
    ``mode="pooled"`` treats every (hour, cell) as one observation. Constant
    variables get NaN rows/columns and are listed in ``undefined``.
    """
    if dataset.hours < 2:
        raise ValueError("need at least two hours to correlate")
    vals = dataset.values
    if mode == "mean":
        table = vals.mean(axis=(2, 3))
    elif mode == "pooled":
        table = vals.transpose(0, 2, 3, 1).reshape(-1, vals.shape[1])
    else:
        raise ValueError(f"unknown correlation mode {mode!r}")
    centered = table - table.mean(axis=0)
    ss = np.einsum("nk,nk->k", centered, centered)
    undefined = tuple(code for code, s in zip(dataset.variables, ss) if s == 0.0)
    cov = centered.T @ centered
    with np.errstate(invalid="ignore", divide="ignore"):
        norm = np.sqrt(ss)
        corr = cov / np.outer(norm, norm)
    corr = np.clip(corr, -1.0, 1.0)
    corr = (corr + corr.T) / 2.0
    ok = ss > 0
    np.fill_diagonal(corr, np.where(ok, 1.0, np.nan))
    corr[~ok, :] = np.nan
    corr[:, ~ok] = np.nan
    return CorrelationMatrix(corr, tuple(dataset.variables), undefined)


# reference tp correlations from the original reanalysis study; compared, never asserted
REFERENCE_CORRELATIONS = {("tp", "rh500"): 0.43, ("tp", "sp"): -0.36}
ADVISORY_TOLERANCE = 0.05


def compare_reference_correlations(matrix, tolerance=ADVISORY_TOLERANCE):
    """Lines comparing measured tp correlations with the reference values."""
    lines = []
    for (a, b), ref in REFERENCE_CORRELATIONS.items():
        got = matrix.get(a, b)
        if math.isnan(got):
            verdict = "undefined"
        else:
            verdict = "within" if abs(got - ref) <= tolerance else "outside"
        lines.append(f"{a}-{b}: measured={got:.4f} reference={ref:+.2f} tolerance={tolerance} -> {verdict}")
    return lines


# --- per-grid reporting -----------------------------------------------------

@dataclass(frozen=True)
class PairedSeries:
    obs: np.ndarray
    pred: np.ndarray
    grid: int
    phase: str
    lead: int

    def __post_init__(self):
        if self.grid not in GRID_CELLS:
            raise ValueError(f"grid id must be one of {sorted(GRID_CELLS)}")
        if self.phase not in PHASES:
            raise ValueError(f"phase must be one of {PHASES}")
        _pair(self.obs, self.pred)


@dataclass
class MetricsReport:
    """Metric triples keyed by ``(grid, phase, lead)``; missing slots stay absent."""

    entries: dict = field(default_factory=dict)
    leads: tuple = LEADS

    def get(self, grid, phase, lead):
        return self.entries.get((grid, phase, lead))

    def slots(self):
        for grid in GRID_CELLS:
            for phase in PHASES:
                for lead in self.leads:
                    yield grid, phase, lead

    def absent(self):
        return [slot for slot in self.slots() if slot not in self.entries]

    def to_records(self):
        records = []
        for grid, phase, lead in self.slots():
            m = self.entries.get((grid, phase, lead))
            rec = {"grid": grid, "phase": phase, "lead": lead, "present": m is not None}
            for key in METRICS:
                rec[key] = None if m is None else m.get(key)
            records.append(rec)
        return records

    def to_json(self):
        return json.dumps(self.to_records(), indent=2) + "\n"

    def to_text(self):
        def cell(m, key):
            if m is None or m.get(key) is None:
                return f"{'--':>7}"
            return f"{m[key]:7.2f}"

        head_leads = "".join(f" | {f'{lead}-hour':^23}" for lead in self.leads)
        sub = "".join(" | " + " ".join(f"{k.upper():>7}" for k in METRICS) for _ in self.leads)
        lines = [f"{'Grid':<5}{'Phase':<10}{head_leads}", f"{'':<15}{sub}"]
        lines.append("-" * len(lines[1]))
        for grid in GRID_CELLS:
            for phase in PHASES:
                row = f"{grid if phase == PHASES[0] else '':<5}{phase.capitalize():<10}"
                for lead in self.leads:
                    m = self.entries.get((grid, phase, lead))
                    row += " | " + " ".join(cell(m, k) for k in METRICS)
                lines.append(row)
        return "\n".join(lines) + "\n"


def metric_triple(obs, pred):
    out = {}
    for key, fn in METRICS.items():
        try:
            out[key] = fn(obs, pred)
        except UndefinedMetricError:
            out[key] = None
    return out


def per_grid_report(series, leads=LEADS):
    """One CC/NSE/NRMSE triple per supplied :class:`PairedSeries`."""
    report = MetricsReport(leads=tuple(sorted(set(leads) | {s.lead for s in series})))
    for s in series:
        report.entries[(s.grid, s.phase, s.lead)] = metric_triple(s.obs, s.pred)
    return report


def cell_of(grid):
    return GRID_CELLS[grid]


def grid_of(row, col):
    return row * GRID[1] + col + 1
