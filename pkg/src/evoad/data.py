"""Dataset ingestion, min-max scaling, windowing and a synthetic benchmark."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from evoad.errors import DataError, ParseError, SeriesTooShort
from evoad.genome import Subspace

LABEL_COLUMN = "label"
ANOMALY_KINDS = ("spike", "drift", "stuck", "correlation-break")


@dataclass
class ImputationReport:
    """Cells that failed to parse and were forward-filled, as (line, column)."""

    cells: list[tuple[int, str]] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.cells)


@dataclass
class TimeSeriesDataset:
    sensor_names: list[str]
    values: np.ndarray  # (T, N)
    labels: Optional[np.ndarray] = None
    normalization: Optional[tuple[np.ndarray, np.ndarray]] = None  # per-sensor (min, max)
    imputation: ImputationReport = field(default_factory=ImputationReport)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DataError("values must be a T x N matrix")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int8)
            if self.labels.shape != (len(self.values),):
                raise DataError("labels must align with rows")

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.values)

    def rows(self, start: int, stop: int) -> "TimeSeriesDataset":
        labels = None if self.labels is None else self.labels[start:stop]
        return replace(self, values=self.values[start:stop], labels=labels)


# ---------------------------------------------------------------- CSV


def _parse_float(cell: str) -> Optional[float]:
    try:
        v = float(cell)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def load_csv(path, has_labels: Optional[bool] = None) -> TimeSeriesDataset:
    """Read a header-first CSV; a trailing ``label`` column holds 0/1 labels.

    Cells that are empty, non-numeric or non-finite are forward-filled from
    the previous row (leading gaps take the first valid value below, or 0)
    and listed in ``dataset.imputation``.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file: missing header row", 1, "header") from None
        header = [h.strip() for h in header]
        if not header or any(not h for h in header):
            raise ParseError("header has empty column names", 1, "header")
        if len(set(header)) != len(header):
            raise ParseError("header has duplicate column names", 1, "header")
        labelled = header[-1] == LABEL_COLUMN
        if has_labels and not labelled:
            raise DataError(f"{path}: expected a trailing {LABEL_COLUMN!r} column")
        if LABEL_COLUMN in header[:-1]:
            raise ParseError(f"{LABEL_COLUMN!r} must be the last column", 1, "header")
        names = header[:-1] if labelled else header
        if not names:
            raise ParseError("no sensor columns", 1, "header")
        rows, labels, report = [], [], ImputationReport()
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} cells, got {len(row)}", lineno)
            vals = []
            for name, cell in zip(names, row):
                v = _parse_float(cell.strip())
                if v is None:
                    report.cells.append((lineno, name))
                    v = math.nan
                vals.append(v)
            rows.append(vals)
            if labelled:
                lab = row[-1].strip()
                if lab not in ("0", "1"):
                    raise ParseError(f"label must be 0 or 1, got {lab!r}", lineno, LABEL_COLUMN)
                labels.append(int(lab))
    values = np.array(rows, dtype=float).reshape(len(rows), len(names))
    _fill_forward(values)
    return TimeSeriesDataset(
        names, values, np.array(labels, dtype=np.int8) if labelled else None, imputation=report
    )


def _fill_forward(values: np.ndarray) -> None:
    for j in range(values.shape[1]):
        col = values[:, j]
        bad = np.isnan(col)
        if not bad.any():
            continue
        good = np.flatnonzero(~bad)
        if good.size == 0:
            col[:] = 0.0
            continue
        idx = np.where(bad, 0, np.arange(len(col)))
        np.maximum.accumulate(idx, out=idx)
        filled = col[idx]
        filled[: good[0]] = col[good[0]]
        col[:] = filled


def save_csv(ds: TimeSeriesDataset, path) -> None:
    """Write ``ds`` so that :func:`load_csv` reproduces the matrix exactly."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = list(ds.sensor_names) + ([LABEL_COLUMN] if ds.labels is not None else [])
        w.writerow(header)
        for t, row in enumerate(ds.values):
            cells = [repr(float(v)) for v in row]
            if ds.labels is not None:
                cells.append(str(int(ds.labels[t])))
            w.writerow(cells)


# ---------------------------------------------------------------- scaling / windows


def fit_minmax(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return values.min(axis=0), values.max(axis=0)


def apply_minmax(values: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (values - lo) / safe
    out[:, span <= 0] = 0.0
    return out


def normalize(ds: TimeSeriesDataset, fit_range: Optional[tuple[int, int]] = None) -> TimeSeriesDataset:
    """Min-max scale every sensor using rows ``fit_range`` (default: all rows).

    Rows outside the fit range may land outside [0, 1]. Constant sensors map
    to 0.
    """
    start, stop = fit_range if fit_range is not None else (0, len(ds))
    if not 0 <= start < stop <= len(ds):
        raise ValueError(f"fit_range {fit_range} outside [0, {len(ds)}]")
    lo, hi = fit_minmax(ds.values[start:stop])
    return replace(ds, values=apply_minmax(ds.values, lo, hi), normalization=(lo, hi))


def apply_normalization(ds: TimeSeriesDataset, normalization: tuple[np.ndarray, np.ndarray]) -> TimeSeriesDataset:
    lo, hi = normalization
    return replace(ds, values=apply_minmax(ds.values, lo, hi), normalization=(lo, hi))


def windows(data, w: int, subspace: Optional[Subspace] = None) -> np.ndarray:
    """Stride-1 sliding windows, shape ``(T - w + 1, w, |subspace|)``.

    Returns a read-only view when no column selection is needed.
    """
    values = data.values if isinstance(data, TimeSeriesDataset) else np.asarray(data, dtype=float)
    if w < 1:
        raise ValueError(f"window must be >= 1, got {w}")
    if subspace is not None:
        values = values[:, list(subspace.feature_indices)]
    if len(values) < w:
        raise SeriesTooShort(f"series of length {len(values)} shorter than window {w}")
    return np.transpose(sliding_window_view(values, w, axis=0), (0, 2, 1))


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class SynthConfig:
    sensors: int = 8
    length: int = 4000
    anomaly_rate: float = 0.05
    anomaly_kinds: tuple[str, ...] = ANOMALY_KINDS
    seed: int = 0
    noise: float = 0.05
    train_fraction: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "anomaly_kinds", tuple(self.anomaly_kinds))
        if self.sensors < 1:
            raise ValueError("sensors must be >= 1")
        if not 0 < self.anomaly_rate < 0.2:
            raise ValueError("anomaly_rate must be in (0, 0.2)")
        if not self.anomaly_kinds or any(k not in ANOMALY_KINDS for k in self.anomaly_kinds):
            raise ValueError(f"anomaly_kinds must be a non-empty subset of {ANOMALY_KINDS}")
        if self.length < 10:
            raise ValueError("length must be >= 10")


def sensor_groups(sensors: int) -> list[int]:
    """Dependency group of every sensor (two groups, interleaved)."""
    return [j % 2 for j in range(sensors)]


def _group_signal(t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p1, p2 = rng.uniform(40, 90), rng.uniform(9, 21)
    f1, f2 = rng.uniform(0, 2 * np.pi, size=2)
    return np.sin(2 * np.pi * t / p1 + f1) + 0.5 * np.sin(2 * np.pi * t / p2 + f2)


def synth_generate(cfg: SynthConfig) -> tuple[TimeSeriesDataset, dict]:
    """Two groups of sensors, each a scaled copy of a group signal plus noise.

    Anomalous segments are injected only after the anomaly-free training
    prefix. Returns the dataset and a metadata dict with every segment.
    """
    rng = np.random.default_rng(cfg.seed)
    T, N = cfg.length, cfg.sensors
    t = np.arange(T, dtype=float)
    groups = sensor_groups(N)
    latents = [_group_signal(t, rng) for _ in range(2)]
    gain = rng.uniform(0.5, 1.5, size=N) * rng.choice([-1.0, 1.0], size=N)
    offset = rng.uniform(-1.0, 1.0, size=N)
    clean = np.stack([gain[j] * latents[groups[j]] + offset[j] for j in range(N)], axis=1)
    values = clean + rng.normal(0.0, cfg.noise, size=(T, N))
    labels = np.zeros(T, dtype=np.int8)

    train_end = int(cfg.train_fraction * T)
    target = int(round(cfg.anomaly_rate * T))
    lengths = []
    while sum(lengths) < target:
        lengths.append(min(int(rng.integers(10, 41)), target - sum(lengths)))
    free = (T - train_end) - target
    min_gap = min(10, free // (len(lengths) + 1)) if lengths else 0
    spare = free - min_gap * (len(lengths) + 1)
    cuts = np.sort(rng.integers(0, spare + 1, size=len(lengths)))
    segments = []
    pos = train_end
    prev_cut = 0
    lo_train, hi_train = clean[:train_end].min(axis=0), clean[:train_end].max(axis=0)
    for seg_len, cut in zip(lengths, cuts):
        pos += min_gap + int(cut - prev_cut)
        prev_cut = int(cut)
        start, stop = pos, pos + seg_len
        kind = str(rng.choice(cfg.anomaly_kinds))
        n_hit = int(rng.integers(1, max(1, N // 2) + 1))
        hit = sorted(int(j) for j in rng.choice(N, size=n_hit, replace=False))
        span = hi_train - lo_train
        for j in hit:
            if kind == "spike":
                sign = rng.choice([-1.0, 1.0])
                values[start:stop, j] += sign * rng.uniform(0.6, 1.0) * span[j]
            elif kind == "drift":
                sign = rng.choice([-1.0, 1.0])
                ramp = np.linspace(0.4, 1.0, seg_len) * rng.uniform(0.6, 1.0) * span[j]
                values[start:stop, j] += sign * ramp
            elif kind == "stuck":
                rail = hi_train[j] + 0.3 * span[j] if rng.random() < 0.5 else lo_train[j] - 0.3 * span[j]
                values[start:stop, j] = rail + rng.normal(0.0, cfg.noise * 0.1, size=seg_len)
            else:  # correlation-break: follow the other group's signal
                other = latents[1 - groups[j]] if N > 1 else -latents[groups[j]]
                values[start:stop, j] = (
                    gain[j] * other[start:stop] + offset[j] + rng.normal(0.0, cfg.noise, size=seg_len)
                )
        labels[start:stop] = 1
        segments.append({"start": start, "stop": stop, "kind": kind, "sensors": hit})
        pos = stop

    names = [f"s{j}" for j in range(N)]
    meta = {
        "format": "evoad-synth/1",
        "seed": cfg.seed,
        "config": {**asdict(cfg), "anomaly_kinds": list(cfg.anomaly_kinds)},
        "train_rows": train_end,
        "groups": groups,
        "anomalies": segments,
    }
    return TimeSeriesDataset(names, values, labels), meta


def split_train_test(ds: TimeSeriesDataset, train_rows: int) -> tuple[TimeSeriesDataset, TimeSeriesDataset]:
    return ds.rows(0, train_rows), ds.rows(train_rows, len(ds))


def select(values: np.ndarray, subspace: Subspace) -> np.ndarray:
    return values[:, list(subspace.feature_indices)]


__all__: Sequence[str] = [
    "TimeSeriesDataset",
    "ImputationReport",
    "SynthConfig",
    "load_csv",
    "save_csv",
    "normalize",
    "apply_normalization",
    "windows",
    "synth_generate",
    "split_train_test",
]
