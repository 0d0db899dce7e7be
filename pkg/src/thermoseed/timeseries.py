"""Time-series data model, CSV ingestion and the preprocessing pipeline.

Measurements live in a :class:`TimeSeriesTable`: a fixed start instant, a
fixed step, and named float64 channels where ``NaN`` marks a deleted or
missing value. All operations are pure and return new tables, so they are
safe to call from multiple threads.

The cleaning pipeline applies, per channel: constant-streak deletion,
non-negative clipping, Gaussian smoothing with missing-aware kernel
renormalization, linear interpolation of short gaps, and 15-minute
averaging down to the model grid.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_is_fitted

__all__ = [
    "TimeSeriesTable",
    "FEATURE_LAYOUT",
    "FORBIDDEN_FEATURES",
    "Normalizer",
    "DisaggregationInput",
    "DisaggregationResult",
    "load_csv",
    "write_csv",
    "delete_constant_streaks",
    "clip_nonnegative",
    "gaussian_smooth",
    "interpolate_gaps",
    "subsample_15min",
    "preprocess_pipeline",
    "encode_time",
    "time_features",
    "disaggregate_power",
    "STREAK_THRESHOLDS",
    "SMOOTH_SIGMAS",
]

# Per-channel-kind cleaning constants: streak thresholds in seconds and
# Gaussian sigmas in samples.
STREAK_THRESHOLDS = {"irradiation": 20 * 3600, "temperature_out": 30 * 60, "power": 24 * 3600}
SMOOTH_SIGMAS = {"irradiation": 2.0, "temperature_out": 2.0, "power": 1.0, "temperature": 5.0}

# Features fed to the neural dynamics function: irradiation plus time
# encodings only. Power and exogenous temperatures must never appear here;
# the consistency guarantees rest on that separation.
FEATURE_LAYOUT = ("irradiation", "month_sin", "month_cos", "tod_sin", "tod_cos", "weekday")
FORBIDDEN_FEATURES = ("power", "temperature_out", "temperature_neigh", "u")


class GridError(ValueError):
    """Timestamp or step does not respect the declared sampling grid."""


@dataclass(frozen=True)
class TimeSeriesTable:
    """Timestamped multi-channel measurements with NaN as 'missing'."""

    start: datetime
    step: int  # seconds
    channels: dict  # name -> float64 ndarray, shared length

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be a positive number of seconds")
        if not (60 % self.step == 0 or self.step % 60 == 0):
            raise ValueError(f"step {self.step}s must divide or be a multiple of 60 s")
        if self.start.tzinfo is None:
            object.__setattr__(self, "start", self.start.replace(tzinfo=timezone.utc))
        lengths = {len(v) for v in self.channels.values()}
        if len(lengths) > 1:
            raise ValueError(f"channels have unequal lengths: {sorted(lengths)}")

    @property
    def length(self):
        return len(next(iter(self.channels.values()))) if self.channels else 0

    def timestamps(self):
        """Row instants as an array of UTC datetimes."""
        base = np.datetime64(self.start.replace(tzinfo=None), "s")
        return base + np.arange(self.length, dtype="int64") * np.timedelta64(self.step, "s")

    def timestamp_at(self, i):
        return self.start + timedelta(seconds=int(i) * self.step)

    def channel(self, name):
        if name not in self.channels:
            raise KeyError(f"unknown channel {name!r}; have {sorted(self.channels)}")
        return self.channels[name]

    def with_channel(self, name, values):
        values = np.asarray(values, dtype=np.float64)
        if self.channels and len(values) != self.length:
            raise ValueError("replacement channel has wrong length")
        updated = dict(self.channels)
        updated[name] = values
        return TimeSeriesTable(self.start, self.step, updated)

    def select(self, names):
        return TimeSeriesTable(self.start, self.step, {n: self.channel(n) for n in names})


def _parse_timestamp(text):
    ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def load_csv(path, schema, step):
    """Read a channel CSV: `timestamp` column plus one column per channel.

    Empty cells become NaN. Timestamps must be strictly increasing and sit
    exactly on the declared grid; violations are rejected with the
    offending row index.
    """
    schema = tuple(schema)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[0] != "timestamp" or tuple(header[1:]) != schema:
            raise ValueError(f"{path}: header {header} does not match schema {('timestamp',) + schema}")
        rows = []
        stamps = []
        for lineno, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                continue
            cells = line.split(",")
            if len(cells) != len(schema) + 1:
                raise ValueError(f"{path}: malformed row {lineno}: expected {len(schema) + 1} cells")
            try:
                stamps.append(_parse_timestamp(cells[0]))
            except ValueError as err:
                raise ValueError(f"{path}: malformed timestamp at row {lineno}: {err}") from None
            rows.append([float(c) if c != "" else np.nan for c in cells[1:]])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    start = stamps[0]
    for i, ts in enumerate(stamps):
        offset = (ts - start).total_seconds()
        if i > 0 and ts <= stamps[i - 1]:
            kind = "duplicate" if ts == stamps[i - 1] else "decreasing"
            raise GridError(f"{path}: {kind} timestamp at row {i}")
        if offset != i * step:
            raise GridError(f"{path}: row {i} is off the {step}s grid")
    data = np.asarray(rows, dtype=np.float64)
    return TimeSeriesTable(start, step, {name: data[:, j].copy() for j, name in enumerate(schema)})


def write_csv(table, path, channels=None):
    names = list(channels) if channels is not None else sorted(table.channels)
    stamps = table.timestamps()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("timestamp," + ",".join(names) + "\n")
        cols = [table.channel(n) for n in names]
        for i in range(table.length):
            cells = [str(stamps[i]) + "+00:00"]
            for col in cols:
                v = col[i]
                cells.append("" if np.isnan(v) else format(v, ".17g"))
            fh.write(",".join(cells) + "\n")


def _runs(values):
    """Yield (start, stop) of maximal runs of identical consecutive values."""
    n = len(values)
    i = 0
    while i < n:
        j = i + 1
        if np.isnan(values[i]):
            while j < n and np.isnan(values[j]):
                j += 1
        else:
            while j < n and values[j] == values[i]:
                j += 1
        yield i, j
        i = j


def delete_constant_streaks(table, channel, max_streak):
    """Replace runs of identical values strictly longer than ``max_streak``.

    ``max_streak`` is in seconds and must be a positive multiple of the
    table step; a run of L samples spans L*step seconds. Deleted samples
    become NaN. Idempotent for a fixed threshold.
    """
    if max_streak <= 0 or max_streak % table.step != 0:
        raise ValueError("max_streak must be a positive multiple of the table step")
    values = table.channel(channel).copy()
    for lo, hi in _runs(values):
        if not np.isnan(values[lo]) and (hi - lo) * table.step > max_streak:
            values[lo:hi] = np.nan
    return table.with_channel(channel, values)


def clip_nonnegative(table, channel):
    values = table.channel(channel).copy()
    mask = ~np.isnan(values)
    values[mask] = np.maximum(values[mask], 0.0)
    return table.with_channel(channel, values)


def gaussian_smooth(table, channel, sigma):
    """Discrete Gaussian smoothing, kernel truncated at +-4 sigma.

    The kernel is renormalized to unit mass at the boundaries and around
    missing entries, which are excluded from their neighbours' support and
    stay missing themselves.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    values = table.channel(channel)
    radius = int(np.ceil(4.0 * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    mask = ~np.isnan(values)
    filled = np.where(mask, values, 0.0)
    num = np.convolve(filled, kernel, mode="same")
    den = np.convolve(mask.astype(np.float64), kernel, mode="same")
    out = np.full_like(values, np.nan)
    valid = mask & (den > 0)
    out[valid] = num[valid] / den[valid]
    return table.with_channel(channel, out)


def interpolate_gaps(table, max_gap=30 * 60):
    """Linearly fill interior missing runs strictly shorter than ``max_gap``.

    Runs of exactly ``max_gap`` or longer, and runs touching either
    boundary, are left untouched. Applies to every channel.
    """
    if max_gap % table.step != 0:
        raise ValueError("max_gap must be a multiple of the table step")
    out = {}
    for name, values in table.channels.items():
        v = values.copy()
        n = len(v)
        i = 0
        while i < n:
            if np.isnan(v[i]):
                j = i
                while j < n and np.isnan(v[j]):
                    j += 1
                interior = i > 0 and j < n
                if interior and (j - i) * table.step < max_gap:
                    v[i:j] = np.interp(np.arange(i, j), [i - 1, j], [v[i - 1], v[j]])
                i = j
            else:
                i += 1
        out[name] = v
    return TimeSeriesTable(table.start, table.step, out)


def subsample_15min(table):
    """Average 1-minute rows into 15-minute rows, ignoring missing values.

    All-missing blocks stay missing; a trailing remainder of fewer than 15
    rows is dropped.
    """
    if table.step != 60:
        raise GridError(f"subsampling expects a 60 s table, got step {table.step}s")
    blocks = table.length // 15
    out = {}
    for name, values in table.channels.items():
        v = values[: blocks * 15].reshape(blocks, 15)
        counts = np.sum(~np.isnan(v), axis=1)
        with np.errstate(invalid="ignore"):
            means = np.nansum(v, axis=1) / np.where(counts > 0, counts, 1)
        means[counts == 0] = np.nan
        out[name] = means
    return TimeSeriesTable(table.start, 900, out)


def encode_time(timestamp):
    """Cyclic encoding of a 15-minute-grid instant.

    Returns (month_sin, month_cos, tod_sin, tod_cos, weekday_code) with the
    month mapped through sin/cos of 2*pi*m/12, the quarter-hour slot through
    2*pi*q/96, and the weekday scaled onto [0, 1] by /6 (Monday = 0).
    """
    if timestamp.tzinfo is None:
        timestamp = timestamp.replace(tzinfo=timezone.utc)
    seconds = timestamp.minute * 60 + timestamp.second
    if seconds % 900 != 0 or timestamp.microsecond:
        raise GridError(f"{timestamp.isoformat()} is not on the 15-minute grid")
    m = timestamp.month
    q = (timestamp.hour * 3600 + seconds) // 900
    ang_m = 2.0 * np.pi * m / 12.0
    ang_q = 2.0 * np.pi * q / 96.0
    return (np.sin(ang_m), np.cos(ang_m), np.sin(ang_q), np.cos(ang_q), timestamp.weekday() / 6.0)


def time_features(table):
    """Time-encoding columns for every row of a 15-minute table."""
    if table.step != 900:
        raise GridError("time features are defined on the 15-minute grid")
    rows = np.empty((table.length, 5))
    for i in range(table.length):
        rows[i] = encode_time(table.timestamp_at(i))
    return rows


def preprocess_pipeline(table):
    """Clean a raw 1-minute table, channel by channel.

    Order: constant-streak deletion, non-negative clipping (irradiation),
    Gaussian smoothing, then linear interpolation of sub-30-minute gaps.
    Streak thresholds are 20 h for irradiation, 30 min for the outside
    temperature and 1 day for power; smoothing sigmas are 2, 2, 1 and 5
    (zone temperatures). Channels the table does not carry are skipped.
    """
    out = table
    if "irradiation" in out.channels:
        out = delete_constant_streaks(out, "irradiation", STREAK_THRESHOLDS["irradiation"])
        out = clip_nonnegative(out, "irradiation")
        out = gaussian_smooth(out, "irradiation", SMOOTH_SIGMAS["irradiation"])
    if "temperature_out" in out.channels:
        out = delete_constant_streaks(out, "temperature_out", STREAK_THRESHOLDS["temperature_out"])
        out = gaussian_smooth(out, "temperature_out", SMOOTH_SIGMAS["temperature_out"])
    if "power" in out.channels:
        out = delete_constant_streaks(out, "power", STREAK_THRESHOLDS["power"])
        out = gaussian_smooth(out, "power", SMOOTH_SIGMAS["power"])
    for name in ("temperature", "temperature_neigh"):
        if name in out.channels:
            out = gaussian_smooth(out, name, SMOOTH_SIGMAS["temperature"])
    return interpolate_gaps(out)


class Normalizer(BaseEstimator, TransformerMixin):
    """Map training channels onto [0.1, 0.9] and back, exactly invertible.

    Channels listed in ``shared`` are normalized with a single common
    (min, max) so that differences between them keep physical meaning
    (zone, outside and neighbour temperatures share one scale). Channels in
    ``zero_channels`` use the same 0.8/(max-min) slope but no offset, so a
    raw 0 stays 0; the heating/cooling power needs this because the control
    transform must satisfy g(0) = 0.
    """

    def __init__(self, lo=0.1, hi=0.9, shared=(), zero_channels=()):
        self.lo = lo
        self.hi = hi
        self.shared = tuple(shared)
        self.zero_channels = tuple(zero_channels)

    def fit(self, table, y=None):
        bounds = {}
        for name, values in table.channels.items():
            finite = values[~np.isnan(values)]
            if finite.size < 2 or float(finite.min()) == float(finite.max()):
                raise ValueError(f"channel {name!r} is degenerate (constant or empty)")
            bounds[name] = (float(finite.min()), float(finite.max()))
        if self.shared:
            lo = min(bounds[n][0] for n in self.shared)
            hi = max(bounds[n][1] for n in self.shared)
            for n in self.shared:
                bounds[n] = (lo, hi)
        self.bounds_ = bounds
        return self

    def _slope(self, name):
        lo, hi = self.bounds_[name]
        return (self.hi - self.lo) / (hi - lo)

    def normalize_values(self, name, values):
        check_is_fitted(self, "bounds_")
        values = np.asarray(values, dtype=np.float64)
        if name in self.zero_channels:
            return values * self._slope(name)
        return self.lo + (values - self.bounds_[name][0]) * self._slope(name)

    def denormalize_values(self, name, values):
        check_is_fitted(self, "bounds_")
        values = np.asarray(values, dtype=np.float64)
        if name in self.zero_channels:
            return values / self._slope(name)
        return self.bounds_[name][0] + (values - self.lo) / self._slope(name)

    def scale_per_unit(self, name):
        """Normalized-unit size of one raw unit of ``name`` (e.g. 1 degC)."""
        return self._slope(name)

    def transform(self, table):
        check_is_fitted(self, "bounds_")
        out = {n: self.normalize_values(n, v) if n in self.bounds_ else v.copy() for n, v in table.channels.items()}
        return TimeSeriesTable(table.start, table.step, out)

    def inverse_transform(self, table):
        check_is_fitted(self, "bounds_")
        out = {n: self.denormalize_values(n, v) if n in self.bounds_ else v.copy() for n, v in table.channels.items()}
        return TimeSeriesTable(table.start, table.step, out)

    def to_meta(self, prefix="norm."):
        """Flatten the fitted state into string key-value pairs."""
        check_is_fitted(self, "bounds_")
        meta = {f"{prefix}lo": format(self.lo, ".17g"), f"{prefix}hi": format(self.hi, ".17g")}
        if self.shared:
            meta[f"{prefix}shared"] = ",".join(self.shared)
        if self.zero_channels:
            meta[f"{prefix}zero"] = ",".join(self.zero_channels)
        for name, (lo, hi) in sorted(self.bounds_.items()):
            meta[f"{prefix}bound.{name}"] = f"{lo:.17g},{hi:.17g}"
        return meta

    @classmethod
    def from_meta(cls, meta, prefix="norm."):
        norm = cls(
            lo=float(meta[f"{prefix}lo"]),
            hi=float(meta[f"{prefix}hi"]),
            shared=tuple(meta[f"{prefix}shared"].split(",")) if f"{prefix}shared" in meta else (),
            zero_channels=tuple(meta[f"{prefix}zero"].split(",")) if f"{prefix}zero" in meta else (),
        )
        bounds = {}
        for key, value in meta.items():
            if key.startswith(f"{prefix}bound."):
                lo, hi = value.split(",")
                bounds[key[len(f"{prefix}bound.") :]] = (float(lo), float(hi))
        norm.bounds_ = bounds
        return norm

    def save(self, path):
        check_is_fitted(self, "bounds_")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"range.lo {self.lo:.17g}\nrange.hi {self.hi:.17g}\n")
            if self.shared:
                fh.write("shared " + ",".join(self.shared) + "\n")
            if self.zero_channels:
                fh.write("zero " + ",".join(self.zero_channels) + "\n")
            for name in sorted(self.bounds_):
                lo, hi = self.bounds_[name]
                fh.write(f"{name}.min {lo:.17g}\n{name}.max {hi:.17g}\n")

    @classmethod
    def load(cls, path):
        entries = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, value = line.split(None, 1)
                entries[key] = value
        shared = tuple(entries.pop("shared", "").split(",")) if "shared" in entries else ()
        zero = tuple(entries.pop("zero", "").split(",")) if "zero" in entries else ()
        norm = cls(lo=float(entries.pop("range.lo")), hi=float(entries.pop("range.hi")), shared=shared, zero_channels=zero)
        bounds = {}
        for key, value in entries.items():
            name, kind = key.rsplit(".", 1)
            bounds.setdefault(name, [None, None])[0 if kind == "min" else 1] = float(value)
        norm.bounds_ = {n: (v[0], v[1]) for n, v in bounds.items()}
        return norm


@dataclass
class DisaggregationInput:
    """Building-level power plus per-room valve openings and design flows."""

    total_power: np.ndarray  # W, per row
    openings: np.ndarray  # (rows, rooms), valve opening fraction in [0, 1]
    mass_flows: np.ndarray  # (rooms,), design mass flow in kg/s

    def __post_init__(self):
        self.total_power = np.asarray(self.total_power, dtype=np.float64)
        self.openings = np.asarray(self.openings, dtype=np.float64)
        self.mass_flows = np.asarray(self.mass_flows, dtype=np.float64)
        if np.any(self.mass_flows <= 0):
            raise ValueError("design mass flows must be positive")
        finite = self.openings[~np.isnan(self.openings)]
        if finite.size and (finite.min() < 0 or finite.max() > 1):
            raise ValueError("valve openings must lie in [0, 1]")


@dataclass
class DisaggregationResult:
    room_power: np.ndarray  # (rows, rooms)
    unattributed_rows: int
    unattributed_power: float


def disaggregate_power(d):
    """Split total power across rooms proportionally to water flow.

    Each room receives u_i * mdot_i / sum_k(u_k * mdot_k) of the total.
    Rows where every valve is closed get zero everywhere (no flow, no
    attribution) and are counted as unattributed diagnostics.
    """
    weights = d.openings * d.mass_flows[None, :]
    denom = weights.sum(axis=1)
    live = denom > 0
    shares = np.zeros_like(weights)
    shares[live] = weights[live] / denom[live, None]
    room = shares * d.total_power[:, None]
    dead = ~live
    return DisaggregationResult(
        room_power=room,
        unattributed_rows=int(dead.sum()),
        unattributed_power=float(np.abs(d.total_power[dead]).sum()),
    )
