"""Window construction, seasonal splitting, training loop and metrics.

Windows follow the sliding scheme used throughout: 12 warm-start rows, one
anchor row, then a horizon block of 48 to 288 rows, emitted on a 1-hour
stride wherever the table is gap-free. Splitting is chronological within
each season with an exclusion band so overlapping windows cannot leak
validation targets into training.

The trainer is model-agnostic: anything exposing ``trainable_items`` /
``batch_loss`` / ``snapshot`` / ``restore`` / ``post_epoch`` can be
trained. Batches group same-length windows so each forward pass is one
stacked recursion.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import timedelta

import numpy as np

from . import autograd as ag
from .timeseries import FEATURE_LAYOUT, time_features

__all__ = [
    "TrainingWindow",
    "WindowBatch",
    "make_windows",
    "split_seasonal",
    "train",
    "TrainResult",
    "TrainingDiverged",
    "evaluate",
    "EvalReport",
    "MARKER_STEPS",
]

WARM_STEPS = 12
# marker horizons: 1 h, 6 h, 12 h, 24 h, 48 h, 72 h in 15-minute steps
MARKER_STEPS = (4, 24, 48, 96, 192, 288)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainingWindow:
    """One normalized warm-start + horizon sequence.

    Arrays have n = warm + 1 + horizon rows: rows [0, warm) initialize the
    recursion with measured temperatures fed back, row ``warm`` is the
    anchor (prediction start), and the remaining rows are the horizon
    targets. ``x`` carries only dynamics-function features (irradiation and
    time encodings).
    """

    x: np.ndarray  # (n, F)
    u: np.ndarray  # (n,)
    t_out: np.ndarray  # (n,)
    t_neigh: np.ndarray  # (n,)
    temp: np.ndarray  # (n,), measured
    season: str  # "heating" | "cooling"
    start_time: object  # datetime of row 0
    anchor_index: int  # row of the anchor in the source table
    warm_steps: int = WARM_STEPS

    def __post_init__(self):
        n = len(self.temp)
        if not (self.warm_steps + 2 <= n):
            raise ValueError("window must contain the warm block, the anchor and at least one target")
        for name in ("x", "u", "t_out", "t_neigh", "temp"):
            values = getattr(self, name)
            if len(values) != n:
                raise ValueError(f"window channel {name} has inconsistent length")
            if not np.all(np.isfinite(values)):
                raise ValueError(f"window channel {name} contains missing values")

    @property
    def horizon(self):
        return len(self.temp) - self.warm_steps - 1

    @property
    def irradiation(self):
        return self.x[:, 0]

    def perturbed(self, channel, row, delta):
        """Copy of the window with one input value shifted by ``delta``."""
        w = replace(self)
        arr = getattr(w, channel).copy()
        arr[row] += delta
        return replace(w, **{channel: arr})


@dataclass
class WindowBatch:
    """Same-length windows stacked step-major for the batched recursion."""

    x: np.ndarray  # (n, B, F)
    u: np.ndarray  # (n, B)
    t_out: np.ndarray  # (n, B)
    t_neigh: np.ndarray  # (n, B)
    temp: np.ndarray  # (n, B)
    warm_steps: int

    @classmethod
    def from_windows(cls, windows):
        lengths = {len(w.temp) for w in windows}
        if len(lengths) != 1:
            raise ValueError("a batch must stack windows of identical length")
        warm = {w.warm_steps for w in windows}
        if len(warm) != 1:
            raise ValueError("a batch must share the warm-start length")
        return cls(
            x=np.stack([w.x for w in windows], axis=1),
            u=np.stack([w.u for w in windows], axis=1),
            t_out=np.stack([w.t_out for w in windows], axis=1),
            t_neigh=np.stack([w.t_neigh for w in windows], axis=1),
            temp=np.stack([w.temp for w in windows], axis=1),
            warm_steps=warm.pop(),
        )

    @property
    def size(self):
        return self.temp.shape[1]

    @property
    def horizon(self):
        return self.temp.shape[0] - self.warm_steps - 1


def window_season(power, heating_months, month):
    """Season tag from the sign of the applied power, calendar fallback."""
    nonzero = power[power != 0.0]
    if nonzero.size:
        return "heating" if float(nonzero.mean()) > 0 else "cooling"
    if heating_months is not None:
        return "heating" if month in heating_months else "cooling"
    return "heating"


def make_windows(table, warm=WARM_STEPS, min_h=48, max_h=288, stride=4, heating_months=None):
    """Sliding windows over a normalized 15-minute table.

    For each anchor on the stride grid the longest gap-free horizon up to
    ``max_h`` is emitted; anything shorter than ``min_h`` is dropped. The
    season tag comes from the sign of the window's nonzero power (or the
    calendar when no power is applied).
    """
    feats = time_features(table)
    irr = table.channel("irradiation")
    # column order must match FEATURE_LAYOUT: irradiation, then the time encodings
    x = np.column_stack([irr, feats])
    assert x.shape[1] == len(FEATURE_LAYOUT)
    u = table.channel("power")
    t_out = table.channel("temperature_out")
    t_neigh = table.channel("temperature_neigh")
    temp = table.channel("temperature")
    finite = np.isfinite(irr) & np.isfinite(u) & np.isfinite(t_out) & np.isfinite(t_neigh) & np.isfinite(temp)
    n = table.length

    # run_len[i]: number of consecutive finite rows starting at i
    run_len = np.zeros(n + 1, dtype=np.int64)
    for i in range(n - 1, -1, -1):
        run_len[i] = run_len[i + 1] + 1 if finite[i] else 0

    windows = []
    for anchor in range(warm, n - 1, stride):
        start = anchor - warm
        if run_len[start] < warm + 1 + min_h:
            continue
        h = min(max_h, int(run_len[start]) - warm - 1)
        stop = anchor + 1 + h
        sl = slice(start, stop)
        stamp = table.timestamp_at(start)
        windows.append(
            TrainingWindow(
                x=x[sl].copy(),
                u=u[sl].copy(),
                t_out=t_out[sl].copy(),
                t_neigh=t_neigh[sl].copy(),
                temp=temp[sl].copy(),
                season=window_season(u[sl], heating_months, stamp.month),
                start_time=stamp,
                anchor_index=anchor,
                warm_steps=warm,
            )
        )
    return windows


def split_seasonal(windows, train_fraction=0.8):
    """Within-season chronological 80/20 split with a leakage guard.

    The cut sits at the ``train_fraction`` quantile of window start rows;
    training keeps windows that end strictly before the cut, validation
    keeps windows that start at or after it, and windows straddling the cut
    are discarded so no timestamp appears on both sides.
    """
    seasons = sorted({w.season for w in windows})
    if not seasons:
        raise ValueError("no windows to split")
    train_set, val_set = [], []
    for season in seasons:
        group = sorted((w for w in windows if w.season == season), key=lambda w: w.anchor_index)
        if len(group) < 5:
            raise ValueError(f"season {season!r} has {len(group)} windows; need at least 5 to split")
        starts = [w.anchor_index - w.warm_steps for w in group]
        if starts[0] == starts[-1]:
            raise ValueError(f"season {season!r} windows all share one start; degenerate split")
        cut = starts[int(np.ceil(train_fraction * len(group))) - 1] + 1
        for w in group:
            first = w.anchor_index - w.warm_steps
            last = w.anchor_index + w.horizon
            if last < cut:
                train_set.append(w)
            elif first >= cut:
                val_set.append(w)
    if not train_set or not val_set:
        raise ValueError("split produced an empty set; not enough span per season")
    return train_set, val_set


@dataclass
class TrainResult:
    epochs: list = field(default_factory=list)  # (epoch, lr, train_loss, val_loss)
    best_val_loss: float = np.inf
    best_epoch: int = 0
    condition_flags: list = field(default_factory=list)  # per-epoch tuple of violations

    @property
    def train_curve(self):
        return [row[2] for row in self.epochs]

    @property
    def val_curve(self):
        return [row[3] for row in self.epochs]


def _batches(windows, batch_size, rng):
    order = rng.permutation(len(windows))
    buckets = {}
    for idx in order:
        buckets.setdefault(len(windows[idx].temp), []).append(idx)
    for length in sorted(buckets):
        group = buckets[length]
        for lo in range(0, len(group), batch_size):
            yield [windows[i] for i in group[lo : lo + batch_size]]


def validation_loss(model, windows, batch_size=64):
    """Mean squared horizon error over a window set (normalized units)."""
    total = 0.0
    count = 0
    buckets = {}
    for w in windows:
        buckets.setdefault(len(w.temp), []).append(w)
    for length in sorted(buckets):
        group = buckets[length]
        for lo in range(0, len(group), batch_size):
            batch = WindowBatch.from_windows(group[lo : lo + batch_size])
            preds = model.predict_batch(batch)
            target = batch.temp[batch.warm_steps + 1 :].T
            total += float(((preds - target) ** 2).sum())
            count += target.size
    return total / count


def train(model, train_windows, val_windows, epochs, seed, batch_size=16, base_lr=0.001):
    """Seeded shuffling, length-bucketed batches, Adam with base_lr/sqrt(h).

    The mean squared error is averaged per step and per window over the
    horizon only. Validation loss is computed each epoch and the
    best-validation parameters are restored at the end. Aborts if the loss
    goes non-finite.
    """
    if not train_windows:
        raise ValueError("training set is empty")
    rng = np.random.default_rng(seed)
    names = [name for name, _ in model.trainable_items()]
    params = [arr for _, arr in model.trainable_items()]
    state = ag.AdamState.for_params(params)
    result = TrainResult()
    best = model.snapshot()
    for epoch in range(1, epochs + 1):
        lr = ag.learning_rate(epoch, base_lr)
        total, weight = 0.0, 0
        for batch_windows in _batches(train_windows, batch_size, rng):
            batch = WindowBatch.from_windows(batch_windows)
            tape = ag.Tape()
            loss, leaves = model.batch_loss(tape, batch)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            grads = ag.backward(tape, loss, [leaves[name] for name in names])
            ag.adam_step(params, grads, state, lr)
            total += value * batch.size
            weight += batch.size
        train_loss = total / weight
        val_loss = validation_loss(model, val_windows) if val_windows else np.nan
        result.epochs.append((epoch, lr, train_loss, val_loss))
        result.condition_flags.append(model.post_epoch())
        if val_windows and val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            best = model.snapshot()
    if val_windows:
        model.restore(best)
    return model, result


@dataclass
class EvalReport:
    """Per-step error statistics in degrees Celsius over a window set."""

    step_mean: np.ndarray  # (max_h,) mean signed error per horizon step
    step_std: np.ndarray  # (max_h,)
    step_count: np.ndarray  # (max_h,) windows reaching each step
    marker_mae: dict  # step -> MAE over windows reaching it
    window_mae: np.ndarray  # (n_windows,) per-window MAE

    def save(self, prefix):
        with open(f"{prefix}_steps.csv", "w", encoding="utf-8") as fh:
            fh.write("step,mean_err,std_err,count\n")
            for i in range(len(self.step_mean)):
                fh.write(f"{i + 1},{self.step_mean[i]:.17g},{self.step_std[i]:.17g},{int(self.step_count[i])}\n")
        with open(f"{prefix}_windows.csv", "w", encoding="utf-8") as fh:
            fh.write("window_id,mae\n")
            for i, mae in enumerate(self.window_mae):
                fh.write(f"{i},{mae:.17g}\n")
        with open(f"{prefix}_markers.txt", "w", encoding="utf-8") as fh:
            for step in sorted(self.marker_mae):
                fh.write(f"mae_at_{step} {self.marker_mae[step]:.17g}\n")


def evaluate(model, windows, normalizer=None, batch_size=64):
    """Denormalized per-step statistics, marker MAEs and per-window MAEs.

    Pure: identical model and windows yield an identical report, and the
    statistics do not depend on window order.
    """
    if not windows:
        raise ValueError("no windows to evaluate")
    norm = normalizer if normalizer is not None else model.normalizer
    max_h = max(w.horizon for w in windows)
    sum_err = np.zeros(max_h)
    sum_sq = np.zeros(max_h)
    count = np.zeros(max_h)
    abs_sum = np.zeros(max_h)
    window_mae = np.full(len(windows), np.nan)

    buckets = {}
    for idx, w in enumerate(windows):
        buckets.setdefault(len(w.temp), []).append((idx, w))
    for length in sorted(buckets):
        group = buckets[length]
        for lo in range(0, len(group), batch_size):
            chunk = group[lo : lo + batch_size]
            ws = [w for _, w in chunk]
            if hasattr(model, "predict_batch"):
                batch = WindowBatch.from_windows(ws)
                preds = norm.denormalize_values("temperature", model.predict_batch(batch))
            else:
                preds = np.stack([model.predict_window(w) for w in ws])
            target = norm.denormalize_values("temperature", np.stack([w.temp[w.warm_steps + 1 :] for w in ws]))
            err = preds - target
            h = err.shape[1]
            sum_err[:h] += err.sum(axis=0)
            sum_sq[:h] += (err**2).sum(axis=0)
            abs_sum[:h] += np.abs(err).sum(axis=0)
            count[:h] += err.shape[0]
            for (idx, _), row in zip(chunk, np.abs(err)):
                window_mae[idx] = row.mean()

    live = count > 0
    mean = np.where(live, sum_err / np.maximum(count, 1), np.nan)
    var = np.where(live, sum_sq / np.maximum(count, 1) - mean**2, np.nan)
    std = np.sqrt(np.maximum(var, 0.0))
    marker = {
        step: float(abs_sum[step - 1] / count[step - 1])
        for step in MARKER_STEPS
        if step <= max_h and count[step - 1] > 0
    }
    return EvalReport(step_mean=mean, step_std=std, step_count=count, marker_mae=marker, window_mae=window_mae)
