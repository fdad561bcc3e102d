"""OHLCV ingestion, min-max scaling, sliding windows, and fold splitting.

The CSV contract is the daily bar export format: UTF-8, header exactly
``Date,Open,High,Low,Close,Adj Close,Volume``, ISO-8601 dates, and the
literal ``null`` (or an empty field) marking a missing value.  Rows with
missing values are dropped and counted; malformed rows are an error.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .linalg import Rng

CSV_HEADER = ("Date", "Open", "High", "Low", "Close", "Adj Close", "Volume")

# Column order for the full six-feature mode; the default is close only.
ALL_FEATURES = ("open", "high", "low", "close", "adj_close", "volume")
DEFAULT_FEATURES = ("close",)


class CsvFormatError(ValueError):
    """Header or file-level structure is wrong."""


class RowError(ValueError):
    """A data row failed to parse; message names the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyDataError(ValueError):
    """No valid rows survived ingestion."""


class DegenerateFeatureError(ValueError):
    """A feature is constant over the scaler fit range."""


class InsufficientDataError(ValueError):
    """Too few rows/samples for the requested windowing or split."""


class FoldError(ValueError):
    """Fold construction is impossible (e.g. fewer samples than folds)."""


@dataclass(frozen=True)
class OhlcvRecord:
    """One daily bar."""

    date: date
    open: float
    high: float
    low: float
    close: float
    adj_close: float
    volume: float

    def __post_init__(self):
        prices = (self.open, self.high, self.low, self.close, self.adj_close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise ValueError(f"{self.date}: prices must be finite and > 0")
        if not (math.isfinite(self.volume) and self.volume >= 0):
            raise ValueError(f"{self.date}: volume must be finite and >= 0")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise ValueError(f"{self.date}: high/low must bracket open/close")

    def feature(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class PriceSeries:
    """Ordered daily bars with strictly increasing dates."""

    records: tuple[OhlcvRecord, ...]

    def __post_init__(self):
        if len(self.records) == 0:
            raise EmptyDataError("a price series needs at least one record")
        for a, b in zip(self.records, self.records[1:]):
            if a.date >= b.date:
                raise ValueError(f"dates must strictly increase: {a.date} then {b.date}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def start_date(self) -> date:
        return self.records[0].date

    @property
    def end_date(self) -> date:
        return self.records[-1].date

    def feature_matrix(self, feature_names: tuple[str, ...]) -> np.ndarray:
        """(n_days, n_features) float64 matrix in the given feature order."""
        return np.array(
            [[r.feature(f) for f in feature_names] for r in self.records], dtype=np.float64)


@dataclass(frozen=True)
class LoadReport:
    """Outcome of one CSV ingestion."""

    rows_loaded: int
    rows_dropped: int
    start_date: date
    end_date: date


def load_csv(path: str | Path) -> tuple[PriceSeries, LoadReport]:
    """Parse a daily OHLCV CSV.

    Rows containing ``null`` or empty fields are dropped and counted;
    unparseable dates/numbers raise RowError with the offending line
    number.  Rows are sorted by date before the series is built.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: file is empty") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise CsvFormatError(
                f"{path}: expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}")

        records: list[OhlcvRecord] = []
        dropped = 0
        for line_number, row in enumerate(reader, start=2):
            if len(row) == 0:
                continue
            if len(row) != len(CSV_HEADER):
                raise RowError(line_number, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
            if any(f.strip() in ("", "null") for f in row):
                dropped += 1
                continue
            try:
                when = date.fromisoformat(row[0].strip())
                numbers = [float(f) for f in row[1:]]
                records.append(OhlcvRecord(when, *numbers))
            except (ValueError, TypeError) as exc:
                raise RowError(line_number, str(exc)) from None

    if not records:
        raise EmptyDataError(f"{path}: no valid rows")
    records.sort(key=lambda r: r.date)
    series = PriceSeries(tuple(records))
    report = LoadReport(len(records), dropped, series.start_date, series.end_date)
    return series, report


@dataclass(frozen=True)
class Scaler:
    """Per-feature min-max normalizer.

    fit_start / fit_end record the day-index span (inclusive) of the data
    the min/max were computed from, so leakage can be audited after the
    fact.
    """

    feature_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    fit_start: int
    fit_end: int

    def __post_init__(self):
        spans = self.maxs - self.mins
        for name, span in zip(self.feature_names, spans):
            if not span > 0:
                raise DegenerateFeatureError(f"feature {name!r} is constant over the fit range")

    def transform(self, values: np.ndarray) -> np.ndarray:
        """Map raw feature rows into [0, 1] on the fit range (not clipped)."""
        return (np.asarray(values, dtype=np.float64) - self.mins) / (self.maxs - self.mins)

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * (self.maxs - self.mins) + self.mins

    def _close_index(self) -> int:
        return self.feature_names.index("close")

    @property
    def close_span(self) -> float:
        i = self._close_index()
        return float(self.maxs[i] - self.mins[i])

    def transform_close(self, x):
        i = self._close_index()
        return (x - self.mins[i]) / (self.maxs[i] - self.mins[i])

    def inverse_close(self, x):
        i = self._close_index()
        return x * (self.maxs[i] - self.mins[i]) + self.mins[i]

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mins": self.mins.tolist(),
            "maxs": self.maxs.tolist(),
            "fit_start": self.fit_start,
            "fit_end": self.fit_end,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        return cls(tuple(doc["feature_names"]), np.array(doc["mins"], dtype=np.float64),
                   np.array(doc["maxs"], dtype=np.float64), doc["fit_start"], doc["fit_end"])


def _check_features(feature_names: tuple[str, ...]) -> tuple[str, ...]:
    feature_names = tuple(feature_names)
    unknown = [f for f in feature_names if f not in ALL_FEATURES]
    if unknown:
        raise ValueError(f"unknown features {unknown}; valid: {ALL_FEATURES}")
    if "close" not in feature_names:
        raise ValueError("feature set must include 'close' (it is the prediction target)")
    return feature_names


def fit_scaler(series: PriceSeries, feature_names: tuple[str, ...],
               index_range: tuple[int, int]) -> Scaler:
    """Min/max over series day indices [start, stop) only."""
    feature_names = _check_features(feature_names)
    start, stop = index_range
    if not (0 <= start < stop <= len(series)):
        raise InsufficientDataError(f"fit range [{start}, {stop}) invalid for {len(series)} days")
    values = series.feature_matrix(feature_names)[start:stop]
    return Scaler(feature_names, values.min(axis=0), values.max(axis=0), start, stop - 1)


@dataclass(frozen=True)
class WindowSample:
    """One supervised example: T normalized (or raw) feature rows and the
    next-step close.  Day indices refer to the source series."""

    inputs: np.ndarray          # (T, n_features)
    target: float               # close at target_index, same scale as inputs
    start_index: int
    target_index: int
    target_date: date
    feature_names: tuple[str, ...]
    normalized: bool

    @property
    def window_len(self) -> int:
        return self.inputs.shape[0]

    def input_vectors(self) -> list[np.ndarray]:
        """The window as a list of column vectors x_1..x_T."""
        return [row.reshape(-1, 1) for row in self.inputs]


def make_windows(series: PriceSeries, scaler: Scaler | None,
                 feature_names: tuple[str, ...], window_len: int,
                 horizon: int = 1) -> list[WindowSample]:
    """Slide a T-day window over the series; sample i pairs days
    [i, i+T) with the close of day i+T+horizon-1.

    With a scaler, inputs and target are normalized; with ``scaler=None``
    the samples carry raw values (for later per-fold normalization).
    """
    feature_names = _check_features(feature_names)
    if window_len < 1 or horizon < 1:
        raise ValueError("window_len and horizon must be >= 1")
    n = len(series)
    count = n - window_len - horizon + 1
    if count < 1:
        raise InsufficientDataError(
            f"series of {n} days is too short for T={window_len}, horizon={horizon}")
    if scaler is not None and tuple(scaler.feature_names) != feature_names:
        raise ValueError(f"scaler features {scaler.feature_names} != requested {feature_names}")

    raw = series.feature_matrix(feature_names)
    close_col = feature_names.index("close")
    values = scaler.transform(raw) if scaler is not None else raw

    samples = []
    for i in range(count):
        t_idx = i + window_len + horizon - 1
        samples.append(WindowSample(
            inputs=values[i:i + window_len].copy(),
            target=float(values[t_idx, close_col]),
            start_index=i,
            target_index=t_idx,
            target_date=series.records[t_idx].date,
            feature_names=feature_names,
            normalized=scaler is not None,
        ))
    return samples


def fit_scaler_to_samples(samples: list[WindowSample]) -> Scaler:
    """Min/max over the raw values of the given samples only.

    Used for per-fold scalers: only days covered by the fold's training
    windows (inputs and target closes) enter the fit, so validation-only
    days cannot leak in.  The recorded fit span is the [earliest window
    day, latest target day] range of these samples.
    """
    if not samples:
        raise InsufficientDataError("cannot fit a scaler to zero samples")
    if any(s.normalized for s in samples):
        raise ValueError("scaler must be fit on raw (unnormalized) samples")
    feature_names = samples[0].feature_names
    stacked = np.concatenate([s.inputs for s in samples], axis=0)
    mins = stacked.min(axis=0)
    maxs = stacked.max(axis=0)
    close_col = feature_names.index("close")
    targets = np.array([s.target for s in samples])
    mins[close_col] = min(mins[close_col], targets.min())
    maxs[close_col] = max(maxs[close_col], targets.max())
    return Scaler(feature_names, mins, maxs,
                  min(s.start_index for s in samples),
                  max(s.target_index for s in samples))


def normalize_samples(samples: list[WindowSample], scaler: Scaler) -> list[WindowSample]:
    """Re-express raw samples in the scaler's [0, 1] coordinates."""
    out = []
    close_col = scaler._close_index()
    for s in samples:
        if s.normalized:
            raise ValueError("samples are already normalized")
        if tuple(s.feature_names) != tuple(scaler.feature_names):
            raise ValueError(f"sample features {s.feature_names} != scaler {scaler.feature_names}")
        out.append(replace(
            s,
            inputs=scaler.transform(s.inputs),
            target=float(scaler.transform_close(s.target)),
            normalized=True,
        ))
    return out


@dataclass(frozen=True)
class FoldSplit:
    """Index sets of one cross-validation fold."""

    fold_index: int
    train_indices: tuple[int, ...]
    validation_indices: tuple[int, ...]


def kfold_split(n_samples: int, k: int = 5, scheme: str = "contiguous",
                seed: int = 0) -> list[FoldSplit]:
    """Partition range(n_samples) into k validation folds.

    ``contiguous`` keeps temporal order and makes the validation folds k
    consecutive blocks; ``shuffled`` applies a seeded permutation first.
    Fold sizes differ by at most one, with the remainder going to the
    earliest folds.
    """
    if k < 2:
        raise FoldError(f"k must be >= 2, got {k}")
    if n_samples < k:
        raise FoldError(f"cannot split {n_samples} samples into {k} folds")
    if scheme not in ("contiguous", "shuffled"):
        raise FoldError(f"unknown fold scheme {scheme!r}")

    order = np.arange(n_samples) if scheme == "contiguous" else Rng(seed).permutation(n_samples)
    base, rem = divmod(n_samples, k)
    splits = []
    start = 0
    for j in range(k):
        size = base + (1 if j < rem else 0)
        val = np.sort(order[start:start + size])
        train = np.sort(np.concatenate([order[:start], order[start + size:]]))
        splits.append(FoldSplit(j, tuple(int(i) for i in train), tuple(int(i) for i in val)))
        start += size
    return splits


def holdout_test_split(samples: list, test_fraction: float = 0.1) -> tuple[list, list]:
    """Reserve the most recent test_fraction of samples, before any folding."""
    if not (0.0 < test_fraction < 0.5):
        raise ValueError(f"test_fraction must be in (0, 0.5), got {test_fraction}")
    n = len(samples)
    n_test = int(n * test_fraction)
    if n_test < 1 or n - n_test < 1:
        raise InsufficientDataError(f"{n} samples cannot support a {test_fraction} holdout")
    return list(samples[:n - n_test]), list(samples[n - n_test:])


def sine_series(n_points: int = 500, period: float = 50.0, amplitude: float = 1.0,
                base: float = 10.0, start: date = date(2000, 1, 1)) -> PriceSeries:
    """Noiseless sine close series (all OHLC fields equal); a learnability
    benchmark where the next value is exactly determined by the window."""
    if base <= amplitude:
        raise ValueError("base must exceed amplitude to keep prices positive")
    records = []
    for i in range(n_points):
        v = base + amplitude * math.sin(2.0 * math.pi * i / period)
        records.append(OhlcvRecord(start + timedelta(days=i), v, v, v, v, v, 1.0))
    return PriceSeries(tuple(records))
