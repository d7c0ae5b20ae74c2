"""Data model, CSV ingestion, electrode arithmetic and time alignment.

Timestamps are held as int64 seconds since the Unix epoch (UTC). Missing
readings are NaN in memory and empty fields on disk; nothing is imputed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

KINDS = ("gas_we", "gas_ae", "gas_signal", "temperature", "humidity")
GAS_KINDS = ("gas_we", "gas_ae", "gas_signal")
POLLUTANTS = ("O3", "NO2", "NO")

_UNITS = {
    "gas_we": "adc",
    "gas_ae": "adc",
    "gas_signal": "adc",
    "temperature": "degC",
    "humidity": "%",
}

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


class DataError(ValueError):
    """Input data violates a structural precondition."""


class MalformedRow(DataError):
    def __init__(self, path, line: int, detail: str):
        super().__init__(f"{path}:{line}: {detail}")
        self.line = line


class DuplicateTimestamp(DataError):
    pass


class NonMonotoneTimestamps(DataError):
    pass


class UnknownColumn(DataError):
    pass


class OffGridTimestamp(DataError):
    pass


class PeriodMismatch(DataError):
    pass


class EmptyIntersection(DataError):
    pass


@dataclass(frozen=True)
class ChannelId:
    """Physical meaning of one raw column.

    ``gas_signal`` is the derived WE - AE channel; the other kinds are what
    the node logs directly.
    """

    kind: str
    pollutant: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind in GAS_KINDS:
            if self.pollutant not in POLLUTANTS:
                raise ValueError(f"gas channel needs a pollutant tag, got {self.pollutant!r}")
        elif self.pollutant is not None:
            raise ValueError(f"{self.kind} channel cannot carry a pollutant tag")

    @property
    def units(self) -> str:
        return _UNITS[self.kind]

    @property
    def is_gas(self) -> bool:
        return self.kind in GAS_KINDS

    @classmethod
    def parse(cls, text: str) -> "ChannelId":
        """Parse ``"gas_we:O3"`` or ``"temperature"``."""
        kind, _, pollutant = text.partition(":")
        return cls(kind.strip(), pollutant.strip() or None)

    def __str__(self):
        return f"{self.kind}:{self.pollutant}" if self.pollutant else self.kind


def infer_schema(columns: Iterable[str]) -> dict[str, ChannelId]:
    """Map conventionally named columns (``o3_we``, ``temperature``...) to channels."""
    schema = {}
    by_lower = {p.lower(): p for p in POLLUTANTS}
    for col in columns:
        name = col.lower()
        stem, _, suffix = name.rpartition("_")
        if suffix in ("we", "ae", "s") and stem in by_lower:
            kind = {"we": "gas_we", "ae": "gas_ae", "s": "gas_signal"}[suffix]
            schema[col] = ChannelId(kind, by_lower[stem])
        elif name in ("temperature", "temp", "temp_c", "t"):
            schema[col] = ChannelId("temperature")
        elif name in ("humidity", "rh", "rh_pct", "relative_humidity"):
            schema[col] = ChannelId("humidity")
        else:
            raise UnknownColumn(f"cannot infer channel for column {col!r}")
    return schema


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def check_grid(times: np.ndarray, period: float, tolerance: float = 0.5) -> None:
    """Require every timestamp within ``tolerance * period`` of ``t0 + k*period``."""
    if len(times) == 0:
        return
    offsets = (times - times[0]) / period
    deviation = np.abs(offsets - np.round(offsets))
    bad = np.flatnonzero(deviation >= tolerance)
    if bad.size:
        i = int(bad[0])
        raise OffGridTimestamp(
            f"timestamp {format_timestamp(times[i])} is off the {period:g} s grid"
        )


@dataclass(frozen=True, eq=False)
class RawSeries:
    """High-frequency multichannel sensor readings on a ``base_period`` grid.

    ``values[i, j]`` is the reading of ``channels[j]`` at ``times[i]``; NaN
    marks a missing reading. Timestamps may skip grid ticks (dropped
    records) but must stay strictly increasing.
    """

    times: np.ndarray
    values: np.ndarray
    channels: tuple[str, ...]
    channel_ids: tuple[ChannelId, ...]
    base_period: float
    grid_tolerance: float = 0.5

    def __post_init__(self):
        times = _frozen(self.times, np.int64)
        values = _frozen(self.values, np.float64)
        if values.ndim != 2 or values.shape != (len(times), len(self.channels)):
            raise DataError(
                f"values shape {values.shape} does not match "
                f"{len(times)} records x {len(self.channels)} channels"
            )
        if len(self.channel_ids) != len(self.channels):
            raise DataError("one ChannelId per channel required")
        if len(set(self.channels)) != len(self.channels):
            raise DataError("duplicate channel names")
        if not self.base_period > 0:
            raise DataError("base_period must be positive")
        d = np.diff(times)
        if np.any(d == 0):
            i = int(np.flatnonzero(d == 0)[0]) + 1
            raise DuplicateTimestamp(f"duplicate timestamp {format_timestamp(times[i])}")
        if np.any(d < 0):
            i = int(np.flatnonzero(d < 0)[0]) + 1
            raise NonMonotoneTimestamps(f"timestamp {format_timestamp(times[i])} goes backwards")
        check_grid(times, self.base_period, self.grid_tolerance)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "channel_ids", tuple(self.channel_ids))
        object.__setattr__(self, "base_period", float(self.base_period))

    def __len__(self):
        return len(self.times)

    @property
    def start_time(self) -> int:
        return int(self.times[0])

    @property
    def end_time(self) -> int:
        return int(self.times[-1])

    def index_of(self, channel: str) -> int:
        try:
            return self.channels.index(channel)
        except ValueError:
            raise KeyError(f"no channel {channel!r}") from None

    def column(self, channel: str) -> np.ndarray:
        return self.values[:, self.index_of(channel)]

    def channel_id(self, channel: str) -> ChannelId:
        return self.channel_ids[self.index_of(channel)]

    def select(self, channels: Sequence[str]) -> "RawSeries":
        idx = [self.index_of(c) for c in channels]
        return RawSeries(
            self.times,
            self.values[:, idx],
            tuple(channels),
            tuple(self.channel_ids[i] for i in idx),
            self.base_period,
            self.grid_tolerance,
        )


@dataclass(frozen=True, eq=False)
class ReferenceSeries:
    """Reference-station concentrations at period ``period`` (µg/m³, NaN = missing)."""

    period: float
    pollutant: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not self.period > 0:
            raise DataError("reference period must be positive")
        times = _frozen(self.times, np.int64)
        values = _frozen(self.values, np.float64)
        if times.shape != values.shape or times.ndim != 1:
            raise DataError("reference times and values must be equal-length vectors")
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneTimestamps("reference timestamps must be strictly increasing")
        if np.any(np.fmod(times, self.period) != 0):
            raise OffGridTimestamp(f"reference timestamps must be multiples of {self.period:g} s")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "period", float(self.period))

    def __len__(self):
        return len(self.times)

    @property
    def n_available(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.values)))


@dataclass(frozen=True, eq=False)
class PeriodSeries:
    """Per-feature values on a regular period; NaN marks a gap."""

    period: float
    times: np.ndarray
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        times = _frozen(self.times, np.int64)
        values = _frozen(self.values, np.float64)
        if values.ndim != 2 or values.shape != (len(times), len(self.names)):
            raise DataError("values must be (len(times), len(names))")
        if np.any(np.diff(times) <= 0):
            raise NonMonotoneTimestamps("period series timestamps must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "period", float(self.period))

    def __len__(self):
        return len(self.times)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


@dataclass(frozen=True, eq=False)
class AggregatedDataset:
    """Calibration pairs ``(x_i, y_i)`` aligned on reference timestamps.

    Rows with any missing feature or a missing target are gaps; they stay in
    the table (so they can be counted) but never reach a fit.
    """

    feature_names: tuple[str, ...]
    times: np.ndarray
    X: np.ndarray
    y: np.ndarray
    target: str | None = None

    def __post_init__(self):
        X = _frozen(self.X, np.float64)
        if X.ndim == 1 and len(self.feature_names) == 0:
            X = X.reshape(-1, 0)
        y = _frozen(self.y, np.float64)
        times = _frozen(self.times, np.int64)
        if X.ndim != 2 or X.shape != (len(times), len(self.feature_names)) or y.shape != times.shape:
            raise DataError("dataset arrays have inconsistent shapes")
        X.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return len(self.times)

    @property
    def P(self) -> int:
        return len(self.feature_names)

    @property
    def gaps(self) -> np.ndarray:
        return np.isnan(self.y) | np.isnan(self.X).any(axis=1)

    @property
    def n_usable(self) -> int:
        return int(np.count_nonzero(~self.gaps))

    def select(self, features: Sequence[str]) -> "AggregatedDataset":
        missing = [f for f in features if f not in self.feature_names]
        if missing:
            raise KeyError(f"unknown features {missing}")
        idx = [self.feature_names.index(f) for f in features]
        return AggregatedDataset(tuple(features), self.times, self.X[:, idx], self.y, self.target)

    def usable(self) -> "AggregatedDataset":
        keep = ~self.gaps
        return AggregatedDataset(
            self.feature_names, self.times[keep], self.X[keep], self.y[keep], self.target
        )

    def take(self, rows) -> "AggregatedDataset":
        rows = np.asarray(rows)
        return AggregatedDataset(
            self.feature_names, self.times[rows], self.X[rows], self.y[rows], self.target
        )


def electrode_signal(we, ae):
    """Working minus auxiliary electrode counts. NaN/None propagate; no clamping."""
    if we is None or ae is None:
        return math.nan
    return np.subtract(we, ae, dtype=np.float64) if np.ndim(we) or np.ndim(ae) else float(we) - float(ae)


def derive_features(raw: RawSeries, electrodes: str = "signal") -> RawSeries:
    """Turn raw channels into calibration features.

    ``signal`` replaces each WE/AE pair with one ``<pollutant>_s`` channel
    holding WE - AE; ``separate`` keeps WE and AE as two features.
    Temperature and humidity pass through. Existing ``gas_signal`` channels
    are kept as they are.
    """
    if electrodes not in ("signal", "separate"):
        raise ValueError(f"electrodes must be 'signal' or 'separate', got {electrodes!r}")
    pairs: dict[str, dict[str, int]] = {}
    for j, cid in enumerate(raw.channel_ids):
        if cid.kind in ("gas_we", "gas_ae"):
            pairs.setdefault(cid.pollutant, {})[cid.kind] = j
    for pol, pair in pairs.items():
        if set(pair) != {"gas_we", "gas_ae"}:
            raise DataError(f"{pol} electrodes must come as a WE/AE pair")

    names, ids, cols = [], [], []
    for j, cid in enumerate(raw.channel_ids):
        if cid.kind in ("gas_we", "gas_ae") and electrodes == "signal":
            if cid.kind == "gas_we":
                pair = pairs[cid.pollutant]
                names.append(f"{cid.pollutant.lower()}_s")
                ids.append(ChannelId("gas_signal", cid.pollutant))
                cols.append(electrode_signal(raw.values[:, pair["gas_we"]], raw.values[:, pair["gas_ae"]]))
            continue
        names.append(raw.channels[j])
        ids.append(cid)
        cols.append(raw.values[:, j])
    values = np.column_stack(cols) if cols else np.empty((len(raw), 0))
    return RawSeries(raw.times, values, tuple(names), tuple(ids), raw.base_period, raw.grid_tolerance)


def align(sensor: PeriodSeries, reference: ReferenceSeries) -> AggregatedDataset:
    """Inner-join sensor aggregates with reference values on timestamp."""
    if not math.isclose(sensor.period, reference.period):
        raise PeriodMismatch(
            f"sensor period {sensor.period:g} s != reference period {reference.period:g} s"
        )
    common, si, ri = np.intersect1d(sensor.times, reference.times, assume_unique=True, return_indices=True)
    if common.size == 0:
        raise EmptyIntersection("sensor and reference series share no timestamps")
    return AggregatedDataset(sensor.names, common, sensor.values[si], reference.values[ri], reference.pollutant)


# --- CSV ----------------------------------------------------------------


def parse_timestamp(text: str) -> int:
    """ISO-8601 to epoch seconds; naive stamps are taken as UTC."""
    text = text.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    ts = dt.timestamp()
    if ts != int(ts):
        raise ValueError("sub-second timestamps are not supported")
    return int(ts)


def format_timestamp(ts) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime(TIMESTAMP_FORMAT)


def format_value(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def _parse_value(text: str) -> float:
    text = text.strip()
    if not text:
        return math.nan
    v = float(text)
    if math.isnan(v):
        return math.nan
    return v


def load_raw_csv(
    path,
    schema: Mapping[str, ChannelId | str] | None = None,
    base_period: float | None = None,
    grid_tolerance: float = 0.5,
) -> RawSeries:
    """Read a raw sensor export.

    Parameters
    ----------
    path : path-like
        CSV with header ``timestamp,<channel>...``.
    schema : mapping, optional
        Column name to ChannelId (or ``"kind:POLLUTANT"`` text). Inferred
        from conventional column names when omitted.
    base_period : float, optional
        Acquisition period T_s in seconds; the median timestamp step when
        omitted.

    Raises
    ------
    MalformedRow, DuplicateTimestamp, NonMonotoneTimestamps, UnknownColumn
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "timestamp":
            raise MalformedRow(path, 1, "first column must be 'timestamp'")
        columns = header[1:]
        if schema is None:
            ids = infer_schema(columns)
        else:
            unknown = [c for c in columns if c not in schema]
            if unknown:
                raise UnknownColumn(f"{path}: columns {unknown} not in channel mapping")
            ids = {c: schema[c] if isinstance(schema[c], ChannelId) else ChannelId.parse(schema[c]) for c in columns}
        width = len(header)
        times, rows = [], []
        seen_last = None
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise MalformedRow(path, line, f"expected {width} fields, got {len(rec)}")
            try:
                ts = parse_timestamp(rec[0])
                vals = [_parse_value(f) for f in rec[1:]]
            except ValueError as exc:
                raise MalformedRow(path, line, str(exc)) from None
            if seen_last is not None:
                if ts == seen_last:
                    raise DuplicateTimestamp(f"{path}:{line}: duplicate timestamp {rec[0]}")
                if ts < seen_last:
                    raise NonMonotoneTimestamps(f"{path}:{line}: timestamp {rec[0]} goes backwards")
            seen_last = ts
            times.append(ts)
            rows.append(vals)
    if not times:
        raise MalformedRow(path, 2, "no data rows")
    times = np.asarray(times, dtype=np.int64)
    if base_period is None:
        if len(times) < 2:
            raise DataError(f"{path}: base_period required for a single-record file")
        base_period = float(np.median(np.diff(times)))
    values = np.asarray(rows, dtype=np.float64).reshape(len(times), len(columns))
    return RawSeries(times, values, tuple(columns), tuple(ids[c] for c in columns), base_period, grid_tolerance)


def write_raw_csv(raw: RawSeries, path) -> None:
    """Write the canonical form read back by :func:`load_raw_csv`."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("timestamp",) + raw.channels)
        for ts, row in zip(raw.times, raw.values):
            w.writerow([format_timestamp(ts)] + [format_value(v) for v in row])


def load_reference_csv(path, pollutant: str, period: float = 3600.0) -> ReferenceSeries:
    """Read a ``timestamp,value`` reference export (hour-start stamps, µg/m³)."""
    path = Path(path)
    times, values = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["timestamp", "value"]:
            raise MalformedRow(path, 1, "reference header must be 'timestamp,value'")
        for line, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != 2:
                raise MalformedRow(path, line, f"expected 2 fields, got {len(rec)}")
            try:
                ts = parse_timestamp(rec[0])
                v = _parse_value(rec[1])
            except ValueError as exc:
                raise MalformedRow(path, line, str(exc)) from None
            if times and ts <= times[-1]:
                cls = DuplicateTimestamp if ts == times[-1] else NonMonotoneTimestamps
                raise cls(f"{path}:{line}: timestamp {rec[0]} out of order")
            if ts % period:
                raise MalformedRow(path, line, f"timestamp {rec[0]} not on the {period:g} s grid")
            times.append(ts)
            values.append(v)
    return ReferenceSeries(period, pollutant, np.asarray(times, dtype=np.int64), np.asarray(values, dtype=float))


def write_reference_csv(ref: ReferenceSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("timestamp", "value"))
        for ts, v in zip(ref.times, ref.values):
            w.writerow((format_timestamp(ts), format_value(v)))
