"""Outlier filtering and the two aggregation stages (T_sen, then T_ref).

Gaps are NaN throughout. Window-level functions work on plain sequences;
the ``*_matrix`` variants do the same row by row on NaN-padded matrices
and are what the pipeline uses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PeriodSeries
from .sampling import HOUR, WindowSet

FILTER_METHODS = ("zscore", "percent_deviation", "none")
FILTER_SCOPES = ("window", "ref_bucket")
STATISTICS = ("mean", "median")


@dataclass(frozen=True)
class FilterSpec:
    method: str = "zscore"
    threshold: float = 2.0
    scope: str = "window"
    # "gas" filters electrode/signal channels only; "all" filters every channel
    channels: str = "gas"

    def __post_init__(self):
        if self.method not in FILTER_METHODS:
            raise ValueError(f"filter method must be one of {FILTER_METHODS}")
        if self.method != "none" and not self.threshold > 0:
            raise ValueError("filter threshold must be positive")
        if self.scope not in FILTER_SCOPES:
            raise ValueError(f"filter scope must be one of {FILTER_SCOPES}")
        if self.channels not in ("gas", "all"):
            raise ValueError("filter channels must be 'gas' or 'all'")


@dataclass(frozen=True)
class AggregateSpec:
    statistic: str = "mean"
    min_count: int | None = None  # None: half the expected count, rounded up

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValueError(f"statistic must be one of {STATISTICS}")
        if self.min_count is not None and (int(self.min_count) != self.min_count or self.min_count < 1):
            raise ValueError("min_count must be a positive integer")

    def resolve(self, expected: float) -> int:
        return int(self.min_count) if self.min_count is not None else default_min_count(expected)


def default_min_count(expected: float) -> int:
    return max(1, math.ceil(0.5 * expected - 1e-9))


def _keep_mask(M: np.ndarray, centre: np.ndarray, spread: np.ndarray, n: np.ndarray, spec: FilterSpec) -> np.ndarray:
    present = ~np.isnan(M)
    if spec.method == "none":
        return present
    with np.errstate(invalid="ignore", divide="ignore"):
        dev = np.abs(M - centre[:, None])
        if spec.method == "zscore":
            z = dev / spread[:, None]
            passthrough = (n < 2) | ~(spread > 0)
            keep = (z <= spec.threshold) | passthrough[:, None]
        else:
            keep = dev <= spec.threshold * np.abs(centre)[:, None]
    return present & keep


def _row_stats(M: np.ndarray):
    n = np.count_nonzero(~np.isnan(M), axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.nansum(M, axis=1) / n
        sq = np.nansum((M - mean[:, None]) ** 2, axis=1)
        sd = np.sqrt(sq / (n - 1))
    return mean, sd, n


def filter_matrix(M: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Single-pass outlier removal per row; removed samples become NaN."""
    M = np.asarray(M, dtype=np.float64)
    if spec.method == "none":
        return M.copy()
    mean, sd, n = _row_stats(M)
    return np.where(_keep_mask(M, mean, sd, n, spec), M, np.nan)


def filter_window(samples, spec: FilterSpec) -> list[float]:
    """Drop outliers from one window of readings.

    ``zscore`` keeps x with |x - mean| / s <= threshold, s being the sample
    standard deviation (n - 1); a window with s = 0 or a single sample
    passes unchanged. ``percent_deviation`` keeps x with
    |x - mean| <= threshold * |mean|. Output is a subsequence of the input.
    """
    samples = [float(s) for s in samples]
    if not samples:
        raise ValueError("cannot filter an empty window")
    if spec.method == "none":
        return samples
    row = np.asarray(samples)[None, :]
    keep = ~np.isnan(filter_matrix(row, spec)[0])
    return [s for s, k in zip(samples, keep) if k]


def aggregate_matrix(M: np.ndarray, statistic: str, min_count: int) -> np.ndarray:
    """Row mean/median over non-NaN entries; rows with fewer than ``min_count`` become NaN."""
    M = np.asarray(M, dtype=np.float64)
    n = np.count_nonzero(~np.isnan(M), axis=1)
    out = np.full(M.shape[0], np.nan)
    ok = (n >= min_count) & (n > 0)
    if ok.any():
        sub = M[ok]
        if statistic == "mean":
            out[ok] = np.nansum(sub, axis=1) / n[ok]
        else:
            out[ok] = np.nanmedian(sub, axis=1)
    return out


def aggregate_window(samples, spec: AggregateSpec) -> float:
    """Mean or median of ``samples``, or NaN (a gap) if there are too few."""
    row = np.asarray([float(s) for s in samples], dtype=np.float64).reshape(1, -1)
    min_count = spec.resolve(row.shape[1])
    return float(aggregate_matrix(row, spec.statistic, min_count)[0])


def _bucket_matrix(values: np.ndarray, bucket: np.ndarray):
    """Scatter a flat series into a NaN-padded ``(n_buckets, max_per_bucket)`` matrix."""
    keys, inverse, counts = np.unique(bucket, return_inverse=True, return_counts=True)
    order = np.argsort(inverse, kind="stable")
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pos = np.arange(len(order)) - starts[inverse[order]]
    M = np.full((len(keys), counts.max() if len(counts) else 0), np.nan)
    M[inverse[order], pos] = values[order]
    return keys, inverse, M


def _ref_bucket_filter(M: np.ndarray, ticks: np.ndarray, t_ref: float, spec: FilterSpec) -> np.ndarray:
    """Filter using statistics pooled over every sample in the tick's T_ref bucket."""
    _, inverse = np.unique(np.floor(ticks / t_ref).astype(np.int64), return_inverse=True)
    pooled = _bucket_matrix(M.ravel(), np.repeat(inverse, M.shape[1]))[2]
    mean, sd, n = _row_stats(pooled)
    keep = _keep_mask(M, mean[inverse], sd[inverse], n[inverse], spec)
    return np.where(keep, M, np.nan)


def to_sen_series(
    windows: WindowSet,
    filt: FilterSpec = FilterSpec(),
    agg: AggregateSpec = AggregateSpec(),
    t_ref: float = HOUR,
) -> PeriodSeries:
    """One value per tick and channel: filter each window, then aggregate it."""
    plan = windows.plan
    min_count = agg.resolve(plan.n_s)
    cols = []
    for j, cid in enumerate(windows.raw.channel_ids):
        M = windows.matrix(j)
        if filt.method != "none" and (filt.channels == "all" or cid.is_gas):
            if filt.scope == "window":
                M = filter_matrix(M, filt)
            else:
                M = _ref_bucket_filter(M, windows.ticks, t_ref, filt)
        cols.append(aggregate_matrix(M, agg.statistic, min_count))
    values = np.column_stack(cols) if cols else np.empty((len(windows), 0))
    return PeriodSeries(plan.t_sen, windows.ticks, windows.channels, values)


def to_ref_series(sen: PeriodSeries, t_ref: float = HOUR, agg: AggregateSpec = AggregateSpec()) -> PeriodSeries:
    """Second aggregation of T_sen values into left-closed ``[t, t + t_ref)`` buckets."""
    ratio = t_ref / sen.period
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise ValueError(f"t_ref={t_ref:g} s is not an integer multiple of t_sen={sen.period:g} s")
    min_count = agg.resolve(round(ratio))
    if len(sen) == 0:
        return PeriodSeries(t_ref, np.empty(0, np.int64), sen.names, np.empty((0, len(sen.names))))
    bucket = (np.floor(sen.times / t_ref) * t_ref).astype(np.int64)
    cols = []
    keys = None
    for j in range(len(sen.names)):
        keys, _, M = _bucket_matrix(sen.values[:, j], bucket)
        cols.append(aggregate_matrix(M, agg.statistic, min_count))
    if keys is None:
        keys = np.unique(bucket)
    values = np.column_stack(cols) if cols else np.empty((len(keys), 0))
    return PeriodSeries(t_ref, keys, sen.names, values)
