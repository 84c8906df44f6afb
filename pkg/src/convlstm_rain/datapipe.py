"""Hourly 2x2 gridded series: CSV I/O, min-max normalization, lead-time windows, chronological split.

CSV layout (long format, one row per hour, cell and variable)::

    timestamp_utc,row,col,variable,value
    2011-01-01T00:00:00Z,0,0,t250,231.5
"""
from __future__ import annotations

import csv
import math
from array import array
from collections.abc import Sequence
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

VARIABLES = (
    "t250", "t500", "t850",
    "rh250", "rh500", "rh850",
    "pv500", "pv850",
    "tcc", "hcc", "sp",
    "tp",
)
UNITS = {
    "t250": "K", "t500": "K", "t850": "K",
    "rh250": "%", "rh500": "%", "rh850": "%",
    "pv500": "K m2 kg-1 s-1", "pv850": "K m2 kg-1 s-1",
    "tcc": "%", "hcc": "%",
    "sp": "Pa",
    "tp": "mm",
}
PREDICTORS = VARIABLES[:-1]
TARGET = "tp"
VAR_INDEX = {code: k for k, code in enumerate(VARIABLES)}
GRID = (2, 2)
CSV_HEADER = ["timestamp_utc", "row", "col", "variable", "value"]
TIME_FORMAT = "%Y-%m-%dT%H:00:00Z"

# split fractions as integer percentages so floor rounding is exact
TRAIN_PERCENT = 85
VALIDATION_PERCENT = 15


class DataValidationError(ValueError):
    """Input data violates the dataset contract. ``problems`` lists every finding."""

    def __init__(self, message, problems=()):
        super().__init__(message)
        self.problems = list(problems)


def format_time(ts):
    return ts.strftime(TIME_FORMAT)


def parse_time(text):
    return datetime.strptime(text, TIME_FORMAT).replace(tzinfo=timezone.utc)


@dataclass(frozen=True)
class GridSeriesDataset:
    """Dense hourly series indexed ``values[hour, variable, row, col]``."""

    start_time: datetime
    values: np.ndarray
    variables: tuple = VARIABLES

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 4 or values.shape[1:] != (len(self.variables),) + GRID:
            raise DataValidationError(
                f"values must be (hours, {len(self.variables)}, {GRID[0]}, {GRID[1]}), got {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise DataValidationError("dataset contains non-finite values")

    @property
    def hours(self):
        return self.values.shape[0]

    def time_at(self, hour):
        return self.start_time + timedelta(hours=int(hour))

    def series(self, code):
        return self.values[:, self.variables.index(code)]

    def validate_physical(self):
        """Raise if precipitation is negative anywhere."""
        tp = self.series(TARGET)
        if np.any(tp < 0):
            hour = int(np.argwhere(tp < 0)[0][0])
            raise DataValidationError(f"negative tp at {format_time(self.time_at(hour))}")


def load_csv(path):
    """Read a long-format CSV into a dense :class:`GridSeriesDataset`."""
    path = Path(path)
    n_var = len(VARIABLES)
    cells = n_var * GRID[0] * GRID[1]
    epoch_hour = {}
    keys = array("q")
    vals = array("d")
    rows_no = array("q")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DataValidationError(f"{path}:1: header must be {','.join(CSV_HEADER)}, got {header}")
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise DataValidationError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
            stamp, r, c, code, raw = rec
            eh = epoch_hour.get(stamp)
            if eh is None:
                try:
                    eh = int(parse_time(stamp).timestamp()) // 3600
                except ValueError:
                    raise DataValidationError(f"{path}:{lineno}: bad timestamp {stamp!r}") from None
                epoch_hour[stamp] = eh
            var = VAR_INDEX.get(code)
            if var is None:
                raise DataValidationError(f"{path}:{lineno}: unknown variable code {code!r}")
            try:
                ri, ci = int(r), int(c)
                value = float(raw)
            except ValueError:
                raise DataValidationError(f"{path}:{lineno}: malformed row {rec}") from None
            if not (0 <= ri < GRID[0] and 0 <= ci < GRID[1]):
                raise DataValidationError(f"{path}:{lineno}: cell ({ri},{ci}) outside the {GRID[0]}x{GRID[1]} grid")
            if not math.isfinite(value):
                raise DataValidationError(f"{path}:{lineno}: non-finite value for {code}")
            if code == TARGET and value < 0:
                raise DataValidationError(f"{path}:{lineno}: negative precipitation {value}")
            keys.append(((eh * n_var + var) * GRID[0] + ri) * GRID[1] + ci)
            vals.append(value)
            rows_no.append(lineno)
    if not keys:
        raise DataValidationError(f"{path}: no data rows")

    ordered = sorted(set(epoch_hour.values()))
    first = ordered[0]
    start = datetime.fromtimestamp(first * 3600, tz=timezone.utc)
    flat = np.frombuffer(keys, dtype=np.int64) - first * cells
    lines = np.frombuffer(rows_no, dtype=np.int64)
    for prev, cur in zip(ordered, ordered[1:]):
        if cur != prev + 1:
            row = int(lines[np.argmax(flat // cells == cur - first)])
            raise DataValidationError(
                f"{path}:{row}: gap in hours between "
                f"{format_time(start + timedelta(hours=prev - first))} and "
                f"{format_time(start + timedelta(hours=cur - first))}"
            )
    hours = len(ordered)

    order = np.argsort(flat, kind="stable")
    sorted_flat = flat[order]
    dup = np.nonzero(sorted_flat[1:] == sorted_flat[:-1])[0]
    if dup.size:
        j = dup[0]
        a, b = int(lines[order[j]]), int(lines[order[j + 1]])
        raise DataValidationError(f"{path}:{b}: duplicate row (first seen at row {a})")

    values = np.full((hours, n_var) + GRID, np.nan)
    values.reshape(-1)[flat] = np.frombuffer(vals, dtype=np.float64)
    missing = np.argwhere(np.isnan(values))
    if missing.size:
        problems = [
            (format_time(start + timedelta(hours=int(h))), VARIABLES[v], int(r), int(c))
            for h, v, r, c in missing
        ]
        shown = "; ".join(f"hour={p[0]} variable={p[1]} row={p[2]} col={p[3]}" for p in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        raise DataValidationError(f"{path}: {len(problems)} missing entries: {shown}{more}", problems)
    return GridSeriesDataset(start, values)


def save_csv(dataset, path):
    """Write ``dataset`` in the long CSV format with shortest round-trip decimals."""
    lines = [",".join(CSV_HEADER)]
    vals = dataset.values
    for h in range(dataset.hours):
        stamp = format_time(dataset.time_at(h))
        for r in range(GRID[0]):
            for c in range(GRID[1]):
                for v, code in enumerate(dataset.variables):
                    lines.append(f"{stamp},{r},{c},{code},{float(vals[h, v, r, c])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


# --- normalization ----------------------------------------------------------

@dataclass(frozen=True)
class NormalizationStats:
    mins: np.ndarray
    maxs: np.ndarray
    degenerate: np.ndarray
    variables: tuple = VARIABLES

    def index(self, variable):
        return self.variables.index(variable) if isinstance(variable, str) else int(variable)

    def save(self, path):
        lines = [
            f"{code},{float(lo)!r},{float(hi)!r},{'true' if deg else 'false'}"
            for code, lo, hi, deg in zip(self.variables, self.mins, self.maxs, self.degenerate)
        ]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        codes, mins, maxs, deg = [], [], [], []
        for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
            if not line.strip():
                continue
            parts = line.split(",")
            if len(parts) != 4 or parts[3] not in ("true", "false"):
                raise DataValidationError(f"{path}:{n}: expected code,min,max,degenerate")
            codes.append(parts[0])
            mins.append(float(parts[1]))
            maxs.append(float(parts[2]))
            deg.append(parts[3] == "true")
        if tuple(codes) != VARIABLES:
            raise DataValidationError(f"{path}: variables must be {','.join(VARIABLES)} in order")
        return cls(np.array(mins), np.array(maxs), np.array(deg, dtype=bool))


def _span_slice(train_span, hours):
    if isinstance(train_span, slice):
        sl = train_span
    elif isinstance(train_span, int):
        sl = slice(0, train_span)
    else:
        sl = slice(*train_span)
    start, stop, _ = sl.indices(hours)
    if stop <= start:
        raise ValueError("training span is empty")
    return slice(start, stop)


def fit_normalization(dataset, train_span):
    """Per-variable min/max over the hours in ``train_span`` (slice, stop hour, or (start, stop))."""
    sl = _span_slice(train_span, dataset.hours)
    span = dataset.values[sl]
    mins = span.min(axis=(0, 2, 3))
    maxs = span.max(axis=(0, 2, 3))
    return NormalizationStats(mins, maxs, maxs == mins, tuple(dataset.variables))


def apply_normalization(dataset, stats):
    """``(x - min) / (max - min)`` per variable; degenerate variables become 0.0."""
    lo = stats.mins[None, :, None, None]
    rng = (stats.maxs - stats.mins)[None, :, None, None]
    safe = np.where(rng == 0, 1.0, rng)
    out = np.where(stats.degenerate[None, :, None, None], 0.0, (dataset.values - lo) / safe)
    return replace(dataset, values=out)


def invert(values, stats, variable):
    """Map normalized ``values`` of one variable back to physical units."""
    k = stats.index(variable)
    values = np.asarray(values, dtype=np.float64)
    if stats.degenerate[k]:
        return np.full_like(values, stats.mins[k])
    return stats.mins[k] + values * (stats.maxs[k] - stats.mins[k])


# --- windows ----------------------------------------------------------------

@dataclass(frozen=True)
class WindowSpec:
    input_length: int = 24
    lead: int = 6

    def __post_init__(self):
        if self.input_length < 1 or self.lead < 1:
            raise ValueError("input_length and lead must be >= 1")


@dataclass(frozen=True)
class WindowedSample:
    x: np.ndarray
    y: np.ndarray
    anchor: int
    anchor_time: datetime


def window_count(hours, spec):
    return max(0, hours - (spec.input_length - 1) - spec.lead)


class WindowSet(Sequence):
    """Read-only, ordered view of lead-time samples over one dataset.

    Sample ``k`` is anchored at hour ``anchors[k]``: its inputs are the 11
    predictors over hours ``anchor-L+1 .. anchor`` and its target is tp at
    ``anchor + lead``.
    """

    def __init__(self, dataset, spec, anchors):
        self.dataset = dataset
        self.spec = spec
        self.anchors = np.asarray(anchors, dtype=np.int64)
        self._pred_idx = [VAR_INDEX[c] for c in PREDICTORS]
        self._offsets = np.arange(-spec.input_length + 1, 1)

    def __len__(self):
        return len(self.anchors)

    def __getitem__(self, k):
        if isinstance(k, slice):
            return WindowSet(self.dataset, self.spec, self.anchors[k])
        a = int(self.anchors[k])
        x, y = self.batch([k])
        return WindowedSample(x[0], y[0], a, self.dataset.time_at(a))

    def batch(self, indices):
        """Stacked ``(x, y)`` arrays: x (n, L, 11, 2, 2), y (n, 1, 2, 2)."""
        anchors = self.anchors[np.asarray(indices, dtype=np.int64)]
        vals = self.dataset.values
        x = vals[anchors[:, None] + self._offsets][:, :, self._pred_idx]
        y = vals[anchors + self.spec.lead][:, VAR_INDEX[TARGET]][:, None]
        return x, y

    def anchor_times(self):
        return [self.dataset.time_at(a) for a in self.anchors]

    def target_hours(self):
        return self.anchors + self.spec.lead

    def with_dataset(self, dataset):
        """Same anchors over another dataset of identical length (e.g. the normalized one)."""
        if dataset.hours != self.dataset.hours:
            raise ValueError("replacement dataset differs in length")
        return WindowSet(dataset, self.spec, self.anchors)


def make_windows(dataset, spec):
    """All samples with anchors ``L-1 .. hours-1-lead`` in chronological order."""
    if dataset.hours < spec.input_length + spec.lead:
        raise ValueError(
            f"dataset has {dataset.hours} hours; need at least input_length + lead = "
            f"{spec.input_length + spec.lead}"
        )
    anchors = np.arange(spec.input_length - 1, dataset.hours - spec.lead)
    return WindowSet(dataset, spec, anchors)


def split_sizes(n):
    """(train, validation, test) counts under floor rounding."""
    n_train = n * TRAIN_PERCENT // 100
    n_val = (n - n_train) * VALIDATION_PERCENT // 100
    return n_train, n_val, n - n_train - n_val


def split(samples):
    """Chronological train / validation / test split of an ordered sample set."""
    if len(samples) < 3:
        raise ValueError("need at least 3 samples to split")
    n_train, n_val, _ = split_sizes(len(samples))
    return samples[:n_train], samples[n_train:n_train + n_val], samples[n_train + n_val:]


@dataclass
class PreparedData:
    stats: NormalizationStats
    normalized: GridSeriesDataset
    train: WindowSet
    validation: WindowSet
    test: WindowSet


def prepare(dataset, spec):
    """Window, split, fit normalization on the training span, and re-point windows at normalized data.

    The training span is every hour touched by a training sample (inputs and
    targets), i.e. hours ``0 .. last_train_anchor + lead``.
    """
    train, val, test = split(make_windows(dataset, spec))
    span_stop = int(train.anchors[-1]) + spec.lead + 1 if len(train) else spec.input_length + spec.lead
    stats = fit_normalization(dataset, span_stop)
    normalized = apply_normalization(dataset, stats)
    return PreparedData(
        stats,
        normalized,
        train.with_dataset(normalized),
        val.with_dataset(normalized),
        test.with_dataset(normalized),
    )
