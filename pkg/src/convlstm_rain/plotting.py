"""Matplotlib figures written as SVG: forecast time series, obs/pred scatter, correlation heatmap.

Output is byte-stable across runs: the SVG id salt is fixed and the date
metadata is dropped.
"""
from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "svg.hashsalt": "convlstm-rain",
    "svg.fonttype": "path",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

OBS_COLOR = "#1f4e79"
PRED_COLOR = "#c0504d"


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def timeseries_figure(times, obs, pred, title, path):
    """Observed vs forecast rainfall against time."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 2.6))
        x = np.arange(len(obs))
        ax.plot(x, obs, color=OBS_COLOR, lw=0.8, label="observed")
        ax.plot(x, pred, color=PRED_COLOR, lw=0.8, alpha=0.85, label="forecast")
        ticks = np.linspace(0, len(obs) - 1, num=min(6, len(obs))).astype(int)
        ax.set_xticks(ticks)
        ax.set_xticklabels([times[k][:10] for k in ticks])
        ax.set_ylabel("rainfall (mm)")
        ax.set_title(title)
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        _save(fig, path)


def scatter_figure(obs, pred, r, title, path):
    """Predicted vs observed rainfall with a 1:1 line and the correlation annotated as R."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.2, 3.2))
        ax.scatter(obs, pred, s=4, color=OBS_COLOR, alpha=0.5, linewidths=0)
        hi = float(max(np.max(obs), np.max(pred), 1e-9))
        ax.plot([0, hi], [0, hi], color="0.5", lw=0.8, ls="--")
        label = "R = n/a" if r is None or math.isnan(r) else f"R = {r:.2f}"
        ax.text(0.05, 0.92, label, transform=ax.transAxes)
        ax.set_xlabel("observed (mm)")
        ax.set_ylabel("predicted (mm)")
        ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)


def correlation_heatmap(matrix, path):
    """Annotated heatmap of a :class:`~convlstm_rain.metrics.CorrelationMatrix`."""
    vals = np.asarray(matrix.values)
    n = len(matrix.variables)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6.4, 5.6))
        im = ax.imshow(np.ma.masked_invalid(vals), cmap="RdBu_r", vmin=-1, vmax=1)
        ax.set_xticks(range(n))
        ax.set_yticks(range(n))
        ax.set_xticklabels(matrix.variables, rotation=45, ha="right")
        ax.set_yticklabels(matrix.variables)
        for i in range(n):
            for j in range(n):
                v = vals[i, j]
                text = "--" if math.isnan(v) else f"{v:.2f}"
                ax.text(j, i, text, ha="center", va="center", fontsize=6,
                        color="white" if not math.isnan(v) and abs(v) > 0.6 else "black")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_title("Correlation matrix")
        fig.tight_layout()
        _save(fig, path)
