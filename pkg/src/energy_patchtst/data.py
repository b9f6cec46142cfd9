"""
Loading, normalization, windowing and splitting of multivariate series.

Normalization has two levels. A global z-score is fitted on the training
rows only; each window is then re-centred on its own lookback (instance
normalization) before it reaches the model. :func:`denormalize_forecast`
undoes both for the predicted mean and variance.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    IrregularSpacingError,
    MissingFileError,
    MissingValueError,
    ParameterError,
    ParseError,
    TimestampError,
)
from .tensor import make_rng

STD_FLOOR = 1e-8
INSTANCE_EPS = 1e-5

# Public ETT hourly layout: date column followed by six load features and oil temperature.
ETT_COLUMNS = ("HUFL", "HULL", "MUFL", "MULL", "LUFL", "LULL", "OT")


@dataclass(frozen=True)
class Schema:
    """Assigns CSV columns to roles; columns not listed are ignored."""

    targets: tuple[str, ...]
    future: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "future", tuple(self.future))
        if not self.targets:
            raise ParameterError("schema needs at least one target column")
        overlap = set(self.targets) & set(self.future)
        if overlap:
            raise ParameterError(f"columns assigned two roles: {sorted(overlap)}")

    @classmethod
    def from_roles(cls, roles: dict[str, str]) -> "Schema":
        bad = {c: r for c, r in roles.items() if r not in ("target", "future", "ignore")}
        if bad:
            raise ParameterError(f"unknown column roles: {bad}")
        return cls(tuple(c for c, r in roles.items() if r == "target"),
                   tuple(c for c, r in roles.items() if r == "future"))


def ett_schema() -> Schema:
    """Oil temperature as the target, the six load features as future-known inputs."""
    return Schema(targets=ETT_COLUMNS[-1:], future=ETT_COLUMNS[:-1])


@dataclass(frozen=True)
class TimeSeriesTable:
    timestamps: np.ndarray  # datetime64[s], shape (T,)
    targets: np.ndarray  # (T, D)
    future: np.ndarray  # (T, E)
    target_names: tuple[str, ...]
    future_names: tuple[str, ...] = ()

    def __post_init__(self):
        t = len(self.timestamps)
        if self.targets.ndim != 2 or self.targets.shape[0] != t or self.targets.shape[1] < 1:
            raise ParameterError(f"targets must be (T, D>=1) with T={t}, got {self.targets.shape}")
        if self.future.ndim != 2 or self.future.shape[0] != t:
            raise ParameterError(f"future must be (T, E) with T={t}, got {self.future.shape}")
        if len(self.target_names) != self.targets.shape[1] or len(self.future_names) != self.future.shape[1]:
            raise ParameterError("channel names do not match channel counts")

    @property
    def n_steps(self) -> int:
        return len(self.timestamps)

    @property
    def n_targets(self) -> int:
        return self.targets.shape[1]

    @property
    def n_future(self) -> int:
        return self.future.shape[1]

    @property
    def step(self) -> np.timedelta64:
        return self.timestamps[1] - self.timestamps[0]


def load_csv(path, schema: Schema) -> TimeSeriesTable:
    """Read a CSV whose first column is an ISO-8601 timestamp.

    Every failure names its 1-based data row and column.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no such data file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file", row=0) from None
        missing = [c for c in (*schema.targets, *schema.future) if c not in header[1:]]
        if missing:
            raise ParseError(f"{path}: columns {missing} not found in header {header}", row=0)
        t_idx = [header.index(c) for c in schema.targets]
        f_idx = [header.index(c) for c in schema.future]

        stamps, t_rows, f_rows = [], [], []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                row = row + [""] * (len(header) - len(row))
            raw_ts = row[0].strip()
            if not raw_ts:
                raise TimestampError(f"{path}: row {row_no} has no timestamp", row=row_no, column=header[0])
            try:
                stamps.append(datetime.fromisoformat(raw_ts))
            except ValueError:
                raise TimestampError(f"{path}: row {row_no}: bad timestamp {raw_ts!r}",
                                     row=row_no, column=header[0]) from None
            t_rows.append([_cell(path, row, i, row_no, header) for i in t_idx])
            f_rows.append([_cell(path, row, i, row_no, header) for i in f_idx])

    if len(stamps) < 2:
        raise ParseError(f"{path}: need at least two data rows, found {len(stamps)}", row=len(stamps))
    step = stamps[1] - stamps[0]
    if step <= timedelta(0):
        raise TimestampError(f"{path}: timestamps not increasing at row 2", row=2, column=header[0])
    for i in range(2, len(stamps)):
        if stamps[i] - stamps[i - 1] != step:
            raise IrregularSpacingError(
                f"{path}: row {i + 1}: spacing {stamps[i] - stamps[i - 1]} differs from {step}",
                row=i + 1, column=header[0])

    return TimeSeriesTable(
        timestamps=np.array(stamps, dtype="datetime64[s]"),
        targets=np.array(t_rows, dtype=np.float64).reshape(len(stamps), len(t_idx)),
        future=np.array(f_rows, dtype=np.float64).reshape(len(stamps), len(f_idx)),
        target_names=schema.targets,
        future_names=schema.future,
    )


def _cell(path, row, col, row_no, header) -> float:
    text = row[col].strip()
    name = header[col]
    if not text:
        raise MissingValueError(f"{path}: empty cell at row {row_no}, column {name!r}", row=row_no, column=name)
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{path}: cannot parse {text!r} at row {row_no}, column {name!r}",
                         row=row_no, column=name) from None
    if math.isnan(value):
        raise MissingValueError(f"{path}: NaN at row {row_no}, column {name!r}", row=row_no, column=name)
    if math.isinf(value):
        raise ParseError(f"{path}: infinite value at row {row_no}, column {name!r}", row=row_no, column=name)
    return value


def write_csv(table: TimeSeriesTable, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["timestamp", *table.target_names, *table.future_names])
        values = np.concatenate([table.targets, table.future], axis=1)
        for ts, row in zip(table.timestamps, values):
            writer.writerow([str(ts).replace("T", " "), *(repr(float(v)) for v in row)])


# -- normalization -----------------------------------------------------------
@dataclass(frozen=True)
class NormalizationStats:
    target_mean: np.ndarray
    target_std: np.ndarray
    future_mean: np.ndarray
    future_std: np.ndarray

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("target_mean", "target_std", "future_mean", "future_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationStats":
        return cls(**{k: np.asarray(d[k], dtype=np.float64) for k in
                      ("target_mean", "target_std", "future_mean", "future_std")})

    @classmethod
    def identity(cls, n_targets: int, n_future: int) -> "NormalizationStats":
        return cls(np.zeros(n_targets), np.ones(n_targets), np.zeros(n_future), np.ones(n_future))

    def normalize_targets(self, values: np.ndarray) -> np.ndarray:
        return (values - self.target_mean) / self.target_std

    def normalize_future(self, values: np.ndarray) -> np.ndarray:
        return (values - self.future_mean) / self.future_std

    def denormalize_targets(self, values: np.ndarray) -> np.ndarray:
        return values * self.target_std + self.target_mean


def _mean_std(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if values.shape[1] == 0:
        return np.zeros(0), np.ones(0)
    return values.mean(axis=0), np.maximum(values.std(axis=0), STD_FLOOR)


def fit_normalizer(table: TimeSeriesTable, train_range) -> NormalizationStats:
    """Per-channel mean and population std over the given row range.

    ``train_range`` is a ``range`` or ``(start, stop)`` pair of row indices.
    """
    start, stop = (train_range.start, train_range.stop) if isinstance(train_range, range) else train_range
    if stop <= start:
        raise ParameterError(f"empty training range [{start}, {stop})")
    tm, ts = _mean_std(table.targets[start:stop])
    fm, fs = _mean_std(table.future[start:stop])
    return NormalizationStats(tm, ts, fm, fs)


# -- windowing ---------------------------------------------------------------
@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray  # (L, D)
    z: np.ndarray  # (H, E)
    y: np.ndarray  # (H, D)
    inst_mean: np.ndarray  # (D,)
    inst_std: np.ndarray  # (D,)
    start: int = 0


@dataclass(frozen=True)
class WindowSet(Sequence):
    """A stack of windows kept as contiguous arrays; indexes like a sequence of samples."""

    x: np.ndarray  # (B, L, D)
    z: np.ndarray  # (B, H, E)
    y: np.ndarray  # (B, H, D)
    inst_mean: np.ndarray  # (B, D)
    inst_std: np.ndarray  # (B, D)
    starts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, idx):
        if isinstance(idx, (int, np.integer)):
            return WindowSample(self.x[idx], self.z[idx], self.y[idx], self.inst_mean[idx],
                                self.inst_std[idx], int(self.starts[idx]))
        return self.subset(idx)

    def subset(self, idx) -> "WindowSet":
        if isinstance(idx, range):
            idx = slice(idx.start, idx.stop, idx.step)
        return WindowSet(self.x[idx], self.z[idx], self.y[idx], self.inst_mean[idx],
                         self.inst_std[idx], self.starts[idx])

    @property
    def lookback(self) -> int:
        return self.x.shape[1]

    @property
    def horizon(self) -> int:
        return self.y.shape[1]

    @property
    def n_targets(self) -> int:
        return self.x.shape[2]

    @property
    def n_future(self) -> int:
        return self.z.shape[2]

    def model_inputs(self) -> tuple[np.ndarray, np.ndarray]:
        """Instance-normalized lookback and target arrays."""
        m, s = self.inst_mean[:, None, :], self.inst_std[:, None, :]
        return (self.x - m) / s, (self.y - m) / s

    def truncate(self, horizon: int) -> "WindowSet":
        return WindowSet(self.x, self.z[:, :horizon], self.y[:, :horizon], self.inst_mean,
                         self.inst_std, self.starts)

    def without_future(self) -> "WindowSet":
        return WindowSet(self.x, self.z[:, :, :0], self.y, self.inst_mean, self.inst_std, self.starts)

    @classmethod
    def stack(cls, samples: Sequence[WindowSample]) -> "WindowSet":
        return cls(np.stack([s.x for s in samples]), np.stack([s.z for s in samples]),
                   np.stack([s.y for s in samples]), np.stack([s.inst_mean for s in samples]),
                   np.stack([s.inst_std for s in samples]),
                   np.array([s.start for s in samples], dtype=np.int64))


def count_windows(n_steps: int, lookback: int, horizon: int, stride: int = 1) -> int:
    return max(0, (n_steps - lookback - horizon) // stride + 1)


def instance_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel lookback mean and ``sqrt(var + eps)`` over the time axis (-2)."""
    mean = x.mean(axis=-2)
    return mean, np.sqrt(x.var(axis=-2) + INSTANCE_EPS)


def make_windows(table: TimeSeriesTable, stats: NormalizationStats, lookback: int, horizon: int,
                 stride: int = 1, instance_norm: bool = True) -> WindowSet:
    if lookback < 1 or horizon < 1 or stride < 1:
        raise ParameterError(f"lookback, horizon and stride must be positive ({lookback}, {horizon}, {stride})")
    need = lookback + horizon
    if table.n_steps < need:
        raise ParameterError(f"series has {table.n_steps} steps; lookback {lookback} + horizon {horizon} "
                             f"needs at least {need}")
    targets = stats.normalize_targets(table.targets)
    future = stats.normalize_future(table.future)
    starts = np.arange(0, table.n_steps - need + 1, stride)
    tv = np.lib.stride_tricks.sliding_window_view(targets, need, axis=0)[starts]  # (B, D, need)
    fv = np.lib.stride_tricks.sliding_window_view(future, horizon, axis=0)[starts + lookback]  # (B, E, H)
    x = np.ascontiguousarray(tv[:, :, :lookback].transpose(0, 2, 1))
    y = np.ascontiguousarray(tv[:, :, lookback:].transpose(0, 2, 1))
    z = np.ascontiguousarray(fv.transpose(0, 2, 1))
    if instance_norm:
        m, s = instance_stats(x)
    else:
        m, s = np.zeros((len(starts), table.n_targets)), np.ones((len(starts), table.n_targets))
    return WindowSet(x, z, y, m, s, starts.astype(np.int64))


# -- splitting ---------------------------------------------------------------
@dataclass(frozen=True)
class DatasetSplit:
    train: range
    val: range
    test: range

    def train_rows(self, lookback: int, horizon: int, stride: int = 1) -> range:
        """Rows touched by any training window (for fitting normalization)."""
        last = (self.train.stop - 1) * stride
        return range(self.train.start * stride, last + lookback + horizon)


def chronological_split(n_windows: int, ratios=(0.7, 0.1, 0.2), gap: int = 0) -> DatasetSplit:
    """Contiguous train/val/test ranges over window indices.

    Train and validation sizes are ``floor(ratio * n)`` of the windows left
    after removing ``gap`` positions between consecutive splits; the test
    split takes the remainder.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or not math.isclose(sum(ratios), 1.0, abs_tol=1e-9):
        raise ParameterError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    if gap < 0:
        raise ParameterError(f"gap must be non-negative, got {gap}")
    usable = n_windows - 2 * gap
    n_train = int(math.floor(ratios[0] * usable + 1e-9))
    n_val = int(math.floor(ratios[1] * usable + 1e-9))
    n_test = usable - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise ParameterError(f"{n_windows} windows (gap {gap}) give an empty split: "
                             f"train={n_train}, val={n_val}, test={n_test}")
    val_start = n_train + gap
    test_start = val_start + n_val + gap
    return DatasetSplit(range(0, n_train), range(val_start, val_start + n_val),
                        range(test_start, test_start + n_test))


def denormalize_forecast(mean: np.ndarray, variance: np.ndarray, stats: NormalizationStats | None,
                         inst_mean: np.ndarray, inst_std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map instance-normalized forecasts back to original units.

    ``mean``/``variance`` are ``(..., H, D)`` and the instance statistics
    ``(..., D)``. With ``stats=None`` the result stays in globally normalized
    units.
    """
    m = np.asarray(inst_mean)[..., None, :]
    s = np.asarray(inst_std)[..., None, :]
    mean = mean * s + m
    variance = variance * s * s
    if stats is not None:
        mean = mean * stats.target_std + stats.target_mean
        variance = variance * stats.target_std ** 2
    return mean, variance


# -- synthetic data ----------------------------------------------------------
@dataclass(frozen=True)
class SyntheticSpec:
    """Coefficients of ``a*sin(2pi t/24) + b*sin(2pi t/168) + c*driver(t) + noise``.

    The driver is a unit-variance AR(1) process with coefficient ``driver_phi``
    and is emitted as a future-known channel.
    """

    daily_amp: float = 1.0
    weekly_amp: float = 0.5
    driver_coef: float = 0.0
    noise_std: float = 0.05
    driver_phi: float = 0.9
    offset: float = 0.0
    n_targets: int = 1
    start: str = "2020-01-01T00:00:00"


def generate_synthetic(seed: int, n_steps: int, spec: SyntheticSpec = SyntheticSpec()) -> TimeSeriesTable:
    if n_steps < 2:
        raise ParameterError(f"need at least 2 steps, got {n_steps}")
    if n_steps < 2 * 168:
        warnings.warn(f"T={n_steps} is shorter than two weekly periods (336); "
                      "the weekly component is still applied", stacklevel=2)
    if not -1.0 < spec.driver_phi < 1.0:
        raise ParameterError(f"driver_phi must lie in (-1, 1), got {spec.driver_phi}")
    rng = make_rng(seed)
    t = np.arange(n_steps, dtype=np.float64)

    innovations = rng.standard_normal(n_steps) * math.sqrt(1.0 - spec.driver_phi ** 2)
    driver = np.empty(n_steps)
    driver[0] = rng.standard_normal()
    for i in range(1, n_steps):
        driver[i] = spec.driver_phi * driver[i - 1] + innovations[i]

    columns = []
    for k in range(spec.n_targets):
        phase = 2.0 * math.pi * k / spec.n_targets
        signal = (spec.daily_amp * np.sin(2.0 * math.pi * t / 24.0 + phase)
                  + spec.weekly_amp * np.sin(2.0 * math.pi * t / 168.0 + phase)
                  + spec.driver_coef * driver + spec.offset)
        columns.append(signal + spec.noise_std * rng.standard_normal(n_steps))

    start = np.datetime64(spec.start, "s")
    names = ("target",) if spec.n_targets == 1 else tuple(f"target_{k}" for k in range(spec.n_targets))
    return TimeSeriesTable(
        timestamps=start + np.arange(n_steps) * np.timedelta64(3600, "s"),
        targets=np.stack(columns, axis=1),
        future=driver[:, None],
        target_names=names,
        future_names=("driver",),
    )
