"""Time-series dataset handling: container, min-max scaling, chronological
splits, N-step training windows, and CSV persistence.

CSV schema (one row per sample at the fixed sampling period):
    t_index, y_001..y_0NY, u_001..u_0NU, d_001..d_0ND
Values are written with 17 significant digits so a write/read round trip is
lossless at float64 precision. Normalization statistics travel in a sidecar
``<name>.norm.csv`` with columns (channel, min, max).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateChannelError, ParseError

GROUPS = ("y", "u", "d")


@dataclass
class TimeSeriesDataset:
    """Aligned output/input/disturbance trajectories at a fixed sampling time."""

    y: np.ndarray
    u: np.ndarray
    d: np.ndarray
    sampling_minutes: int = 15

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=np.float64))
        self.u = np.atleast_2d(np.asarray(self.u, dtype=np.float64))
        self.d = np.atleast_2d(np.asarray(self.d, dtype=np.float64))
        if not (len(self.y) == len(self.u) == len(self.d)):
            raise DataError(f"row counts differ: y={len(self.y)}, u={len(self.u)}, "
                            f"d={len(self.d)}")

    def __len__(self) -> int:
        return self.y.shape[0]

    def rows(self, start: int, stop: int) -> "TimeSeriesDataset":
        return TimeSeriesDataset(self.y[start:stop], self.u[start:stop],
                                 self.d[start:stop], self.sampling_minutes)

    def group(self, name: str) -> np.ndarray:
        return getattr(self, name)


@dataclass
class NormalizationStats:
    """Per-channel (min, max) for each variable group, fit on training data."""

    mins: dict[str, np.ndarray]
    maxs: dict[str, np.ndarray]

    def range(self, group: str) -> np.ndarray:
        return self.maxs[group] - self.mins[group]


def fit_stats(ds: TimeSeriesDataset) -> NormalizationStats:
    """Channel extrema; call this on the training split only."""
    mins, maxs = {}, {}
    for g in GROUPS:
        arr = ds.group(g)
        lo, hi = arr.min(axis=0), arr.max(axis=0)
        flat = np.flatnonzero(hi <= lo)
        if flat.size:
            raise DegenerateChannelError(g, flat.tolist())
        mins[g], maxs[g] = lo, hi
    return NormalizationStats(mins, maxs)


def normalize(ds: TimeSeriesDataset,
              stats: NormalizationStats | None = None
              ) -> tuple[TimeSeriesDataset, NormalizationStats]:
    """Min-max scale every channel; values outside the stats' range map
    outside [0, 1], which is expected for dev/test splits."""
    if len(ds) == 0:
        raise DataError("cannot normalize an empty dataset")
    if stats is None:
        stats = fit_stats(ds)
    scaled = {g: (ds.group(g) - stats.mins[g]) / stats.range(g) for g in GROUPS}
    return TimeSeriesDataset(scaled["y"], scaled["u"], scaled["d"],
                             ds.sampling_minutes), stats


def denormalize(ds: TimeSeriesDataset, stats: NormalizationStats) -> TimeSeriesDataset:
    raw = {g: ds.group(g) * stats.range(g) + stats.mins[g] for g in GROUPS}
    return TimeSeriesDataset(raw["y"], raw["u"], raw["d"], ds.sampling_minutes)


def denormalize_mse(mse, stats: NormalizationStats, group: str = "y"
                    ) -> tuple[float, float]:
    """Convert normalized squared error to physical units.

    ``mse`` is either a per-channel vector of normalized MSEs or a scalar
    (scalar form requires all channel ranges to be equal). Returns
    (MSE in K^2, per-output RMSE in K).
    """
    rng = stats.range(group)
    mse = np.asarray(mse, dtype=np.float64)
    if mse.ndim == 0:
        if np.ptp(rng) > 1e-9 * np.max(rng):
            raise DataError(f"{group} channel ranges differ; pass per-channel MSEs")
        k2 = float(mse) * float(rng[0]) ** 2
    else:
        if mse.shape[0] != rng.shape[0]:
            raise DataError(f"expected {rng.shape[0]} per-channel MSEs, got {mse.shape[0]}")
        k2 = float(np.mean(mse * rng**2))
    return k2, float(np.sqrt(k2))


def split_even(ds: TimeSeriesDataset, horizon: int | None = None
               ) -> tuple[TimeSeriesDataset, TimeSeriesDataset, TimeSeriesDataset]:
    """Chronological thirds (train, dev, test); a remainder is dropped with
    a warning."""
    t = len(ds)
    third = t // 3
    if horizon is not None and t < 3 * horizon:
        raise DataError(f"{t} rows cannot cover three splits of horizon {horizon}")
    if third == 0:
        raise DataError(f"{t} rows are too few to split into thirds")
    if t % 3:
        warnings.warn(f"dataset length {t} not divisible by 3; dropping last {t % 3} row(s)")
    return (ds.rows(0, third), ds.rows(third, 2 * third), ds.rows(2 * third, 3 * third))


@dataclass
class WindowBatch:
    """One N-step training window.

    ``past_y`` holds the N observations feeding the observer; ``ref_y`` the
    N target rows that immediately follow; ``u``/``d`` the inputs driving
    each predicted step. ``start_index`` is the split-local row of the first
    target.
    """

    past_y: np.ndarray
    u: np.ndarray
    d: np.ndarray
    ref_y: np.ndarray
    start_index: int


def make_windows(ds: TimeSeriesDataset, horizon: int, stride: int | None = None
                 ) -> list[WindowBatch]:
    """Windows at the given stride (default: non-overlapping, stride == N)."""
    n = int(horizon)
    stride = n if stride is None else int(stride)
    if n < 1 or stride < 1:
        raise DataError("horizon and stride must be positive")
    length = len(ds)
    if length < 2 * n:
        raise DataError(f"split of {length} rows is shorter than two horizons ({2 * n})")
    count = (length - n) // stride
    windows = []
    for k in range(count):
        s = n + k * stride
        if s + n > length:
            break
        windows.append(WindowBatch(
            past_y=ds.y[s - n:s],
            u=ds.u[s - 1:s + n - 1],
            d=ds.d[s - 1:s + n - 1],
            ref_y=ds.y[s:s + n],
            start_index=s,
        ))
    return windows


def stack_windows(windows: list[WindowBatch]):
    """Batch windows along a trailing axis: [N x channels x batch] arrays."""
    past = np.stack([w.past_y for w in windows], axis=2)
    u = np.stack([w.u for w in windows], axis=2)
    d = np.stack([w.d for w in windows], axis=2)
    ref = np.stack([w.ref_y for w in windows], axis=2)
    return past, u, d, ref


# ---------------------------------------------------------------------------
# CSV persistence

def _channel_labels(n_y: int, n_u: int, n_d: int) -> list[str]:
    return ([f"y_{i + 1:03d}" for i in range(n_y)]
            + [f"u_{i + 1:03d}" for i in range(n_u)]
            + [f"d_{i + 1:03d}" for i in range(n_d)])


def write_csv(ds: TimeSeriesDataset, path) -> None:
    header = ["t_index"] + _channel_labels(ds.y.shape[1], ds.u.shape[1], ds.d.shape[1])
    block = np.hstack([ds.y, ds.u, ds.d])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(len(ds)):
            writer.writerow([t] + [f"{v:.17g}" for v in block[t]])


def read_csv(path, sampling_minutes: int = 15) -> TimeSeriesDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        counts = {"y": 0, "u": 0, "d": 0}
        for col in header[1:]:
            tag = col.split("_")[0]
            if tag in counts:
                counts[tag] += 1
        expected = ["t_index"] + _channel_labels(counts["y"], counts["u"], counts["d"])
        if header != expected or 0 in counts.values():
            for i, (got, want) in enumerate(zip(header, expected)):
                if got != want:
                    raise ParseError(f"{path}: header column {i} is {got!r}, "
                                     f"expected {want!r}")
            raise ParseError(f"{path}: header {header[:4]}... does not match the "
                             f"t_index/y/u/d schema")
        width = len(expected)
        rows = []
        for r, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected {width}")
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                bad = next(i for i, v in enumerate(row) if not _is_float(v))
                raise ParseError(f"{path}: row {r}, column {header[bad]!r}: "
                                 f"non-numeric cell {row[bad]!r}") from None
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)[:, 1:]
    ny, nu = counts["y"], counts["u"]
    return TimeSeriesDataset(arr[:, :ny], arr[:, ny:ny + nu], arr[:, ny + nu:],
                             sampling_minutes)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def write_norm_stats(stats: NormalizationStats, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["channel", "min", "max"])
        for g in GROUPS:
            for i, (lo, hi) in enumerate(zip(stats.mins[g], stats.maxs[g])):
                writer.writerow([f"{g}_{i + 1:03d}", f"{lo:.17g}", f"{hi:.17g}"])


def read_norm_stats(path) -> NormalizationStats:
    mins = {g: [] for g in GROUPS}
    maxs = {g: [] for g in GROUPS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["channel", "min", "max"]:
            raise ParseError(f"{path}: expected header channel,min,max")
        for r, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ParseError(f"{path}: row {r} has {len(row)} cells, expected 3")
            g = row[0].split("_")[0]
            if g not in GROUPS:
                raise ParseError(f"{path}: row {r}: unknown channel {row[0]!r}")
            mins[g].append(float(row[1]))
            maxs[g].append(float(row[2]))
    return NormalizationStats({g: np.array(v) for g, v in mins.items()},
                              {g: np.array(v) for g, v in maxs.items()})
