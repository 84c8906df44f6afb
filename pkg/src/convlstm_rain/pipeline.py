"""End-to-end steps shared by the CLI: train, predict, evaluate, report."""
from __future__ import annotations

import csv
import json
import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from .convlstm import init_params, load_checkpoint, save_checkpoint
from .datapipe import (
    GRID,
    NormalizationStats,
    WindowSpec,
    apply_normalization,
    format_time,
    invert,
    make_windows,
    parse_time,
    prepare,
    split,
)
from .metrics import PHASES, PairedSeries, grid_of, metric_triple, per_grid_report
from .training import format_log_line, predict, relu_kink_margin, train

CHECKPOINT_FILE = "checkpoint.txt"
STATS_FILE = "norm_stats.txt"
LOG_FILE = "train_log.txt"
HISTORY_FILE = "history.json"
PREDICTION_HEADER = ["timestamp_utc", "row", "col", "observed_mm", "predicted_mm"]
PREDICTION_NAME = re.compile(r"predictions_(training|testing)_(\d+)h\.csv$")


def prediction_filename(phase, lead):
    return f"predictions_{phase}_{lead}h.csv"


def run_training(cfg, dataset, out_dir, log=None):
    """Train on ``dataset`` per ``cfg`` and write checkpoint, stats, log and history under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.network_spec()
    prep = prepare(dataset, cfg.window_spec())
    log_lines = []

    def on_epoch(rec):
        line = format_log_line(rec)
        log_lines.append(line)
        if log is not None:
            log(line)

    params, history = train(
        spec, prep.train, prep.validation, cfg.train_config(),
        params=init_params(spec, cfg.seed), on_epoch=on_epoch,
    )
    meta = {"lead": cfg.lead, "input_length": cfg.input_length, "seed": cfg.seed}
    save_checkpoint(out / CHECKPOINT_FILE, spec, params, meta)
    prep.stats.save(out / STATS_FILE)
    (out / LOG_FILE).write_text("".join(line + "\n" for line in log_lines))
    summary = {
        "best_epoch": history.best_epoch,
        "stop_reason": history.stop_reason,
        "train_loss": history.train_losses,
        "val_loss": history.val_losses,
        "samples": {"train": len(prep.train), "validation": len(prep.validation), "test": len(prep.test)},
    }
    (out / HISTORY_FILE).write_text(json.dumps(summary, indent=2) + "\n")
    return params, history, prep


def prediction_rows(spec, params, stats, windows, chunk=512):
    """Rows ``(timestamp, row, col, observed_mm, predicted_mm)`` for every sample and cell."""
    if len(windows) == 0:
        return []
    pred = predict(spec, params, windows, chunk)
    _, y = windows.batch(np.arange(len(windows)))
    pred_mm = invert(pred[:, 0], stats, "tp")
    obs_mm = invert(y[:, 0], stats, "tp")
    rows = []
    for k, hour in enumerate(windows.target_hours()):
        stamp = format_time(windows.dataset.time_at(hour))
        for r in range(GRID[0]):
            for c in range(GRID[1]):
                rows.append((stamp, r, c, float(obs_mm[k, r, c]), float(pred_mm[k, r, c])))
    return rows


def run_predict(checkpoint, dataset, out_dir, stats_path=None, lead=None):
    """Predict the training and testing splits of ``dataset`` with a saved model."""
    checkpoint = Path(checkpoint)
    spec, params, meta = load_checkpoint(checkpoint)
    trained_lead = int(meta.get("lead", 6))
    if lead is not None and lead != trained_lead:
        raise ValueError(f"checkpoint was trained for lead {trained_lead}h, not {lead}h")
    stats = NormalizationStats.load(stats_path or checkpoint.parent / STATS_FILE)
    wspec = WindowSpec(int(meta.get("input_length", 24)), trained_lead)
    train_w, _, test_w = split(make_windows(dataset, wspec))
    normalized = apply_normalization(dataset, stats)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for phase, windows in (("training", train_w), ("testing", test_w)):
        rows = prediction_rows(spec, params, stats, windows.with_dataset(normalized))
        path = out / prediction_filename(phase, trained_lead)
        write_predictions(path, rows)
        written.append(path)
    return written


def write_predictions(path, rows):
    lines = [",".join(PREDICTION_HEADER)]
    lines.extend(f"{s},{r},{c},{o!r},{p!r}" for s, r, c, o, p in rows)
    Path(path).write_text("\n".join(lines) + "\n")


def read_predictions(path):
    rows = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PREDICTION_HEADER:
            raise ValueError(f"{path}:1: header must be {','.join(PREDICTION_HEADER)}")
        for n, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                rows.append((rec[0], int(rec[1]), int(rec[2]), float(rec[3]), float(rec[4])))
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{n}: malformed prediction row") from None
    return rows


def phase_lead_from_name(path):
    m = PREDICTION_NAME.search(Path(path).name)
    if not m:
        return None, None
    return m.group(1), int(m.group(2))


def paired_series(rows, phase, lead):
    """Group prediction rows by cell into chronologically ordered :class:`PairedSeries`."""
    by_cell = defaultdict(list)
    for stamp, r, c, o, p in rows:
        by_cell[(r, c)].append((stamp, o, p))
    series = []
    for (r, c), items in sorted(by_cell.items()):
        items.sort()
        obs = np.array([o for _, o, _ in items])
        pred = np.array([p for _, _, p in items])
        series.append(PairedSeries(obs, pred, grid_of(r, c), phase, lead))
    return series


def replace_observed(rows, dataset):
    """Swap the observed column for tp looked up in ``dataset``."""
    tp = dataset.series("tp")
    start = dataset.start_time
    out = []
    for stamp, r, c, _, p in rows:
        hour = int((parse_time(stamp) - start).total_seconds()) // 3600
        if not 0 <= hour < dataset.hours:
            raise ValueError(f"prediction time {stamp} outside the observation dataset")
        out.append((stamp, r, c, float(tp[hour, r, c]), p))
    return out


def evaluate_files(paths, phase=None, lead=None, obs_dataset=None):
    """MetricsReport for the given prediction files (phase/lead taken from the file names)."""
    series = []
    for path in paths:
        ph, ld = phase_lead_from_name(path)
        ph, ld = ph or phase, ld or lead
        if ph not in PHASES or ld is None:
            raise ValueError(f"{path}: cannot tell phase/lead; name it predictions_<phase>_<lead>h.csv or pass --phase/--lead")
        rows = read_predictions(path)
        if obs_dataset is not None:
            rows = replace_observed(rows, obs_dataset)
        series.extend(paired_series(rows, ph, ld))
    return per_grid_report(series), series


def write_report(report, out_dir, stem="metrics"):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{stem}.txt").write_text(report.to_text())
    (out / f"{stem}.json").write_text(report.to_json())


def build_report(in_dir, out_dir):
    """Per-grid metrics text/JSON plus per-series CSV, time-series SVG and scatter SVG."""
    from . import plotting

    in_dir, out_dir = Path(in_dir), Path(out_dir)
    paths = sorted(p for p in in_dir.glob("predictions_*h.csv") if PREDICTION_NAME.search(p.name))
    if not paths:
        raise FileNotFoundError(f"no predictions_<phase>_<lead>h.csv files in {in_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    all_series = []
    for path in paths:
        phase, lead = phase_lead_from_name(path)
        rows = read_predictions(path)
        by_cell = defaultdict(list)
        for stamp, r, c, o, p in rows:
            by_cell[(r, c)].append((stamp, o, p))
        for (r, c), items in sorted(by_cell.items()):
            items.sort()
            grid = grid_of(r, c)
            tag = f"grid{grid}_{phase}_{lead}h"
            times = [s for s, _, _ in items]
            obs = np.array([o for _, o, _ in items])
            pred = np.array([p for _, _, p in items])
            lines = ["time,observed_mm,predicted_mm"]
            lines.extend(f"{s},{o!r},{p!r}" for s, o, p in items)
            (out_dir / f"series_{tag}.csv").write_text("\n".join(lines) + "\n")
            cc = metric_triple(obs, pred)["cc"]
            title = f"Grid {grid}, {phase}, {lead}-hour lead"
            plotting.timeseries_figure(times, obs, pred, title, out_dir / f"timeseries_{tag}.svg")
            plotting.scatter_figure(obs, pred, cc, title, out_dir / f"scatter_{tag}.svg")
            all_series.append(PairedSeries(obs, pred, grid, phase, lead))
    report = per_grid_report(all_series)
    (out_dir / "grid_metrics.txt").write_text(report.to_text())
    (out_dir / "metrics.json").write_text(report.to_json())
    return report


def gradcheck_instance(spec, steps=4, batch=2, seed=0, min_margin=1e-3, max_tries=50):
    """Random parameters, inputs and targets for a finite-difference check.

    Peepholes and biases are perturbed away from their zero init so every path
    carries signal. In relu mode, seeds whose pre-activations sit within
    ``min_margin`` of the kink are skipped.
    """
    for attempt in range(max_tries):
        rng = np.random.default_rng([seed, attempt])
        params = init_params(spec, int(rng.integers(2**31)))
        for name, arr in params.items():
            if name.rsplit(".", 1)[-1] in ("W_ci", "W_cf", "W_co", "b_i", "b_f", "b_c", "b_o", "b"):
                params[name] = arr + 0.3 * rng.standard_normal(arr.shape)
        for name in spec.frozen_names():
            params[name] = np.zeros_like(params[name])
        x = rng.uniform(0.0, 1.0, (batch, steps, spec.input_channels) + tuple(spec.grid))
        y = rng.uniform(0.0, 1.0, (batch, 1) + tuple(spec.grid))
        if spec.activation != "relu" or relu_kink_margin(spec, params, x) >= min_margin:
            return params, x, y
    raise RuntimeError("could not find a kink-free relu instance")

