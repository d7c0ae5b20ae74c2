import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsample.core import (
    AggregatedDataset,
    ChannelId,
    DuplicateTimestamp,
    EmptyIntersection,
    MalformedRow,
    NonMonotoneTimestamps,
    OffGridTimestamp,
    PeriodMismatch,
    PeriodSeries,
    RawSeries,
    ReferenceSeries,
    UnknownColumn,
    align,
    derive_features,
    electrode_signal,
    load_raw_csv,
    load_reference_csv,
    parse_timestamp,
    write_raw_csv,
    write_reference_csv,
)

SCHEMA = {"o3_we": "gas_we:O3", "o3_ae": "gas_ae:O3", "temp_c": "temperature", "rh_pct": "humidity"}
T0 = parse_timestamp("2021-01-15T00:00:00Z")


def write(tmp_path, text, name="raw.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_three_rows(tmp_path):
    p = write(tmp_path, "timestamp,o3_we,o3_ae,temp_c,rh_pct\n"
                        "2021-01-15T00:00:00Z,500,300,12.5,60\n"
                        "2021-01-15T00:00:02Z,501,299,12.5,61\n"
                        "2021-01-15T00:00:04Z,502,,12.6,61\n")
    raw = load_raw_csv(p, SCHEMA)
    assert len(raw) == 3
    assert raw.channels == ("o3_we", "o3_ae", "temp_c", "rh_pct")
    assert raw.base_period == 2.0
    assert raw.channel_id("o3_ae") == ChannelId("gas_ae", "O3")
    assert math.isnan(raw.column("o3_ae")[2])
    assert raw.start_time == T0


def test_duplicate_timestamp(tmp_path):
    p = write(tmp_path, "timestamp,o3_we,o3_ae,temp_c,rh_pct\n"
                        "2021-01-15T00:00:00Z,500,300,12.5,60\n"
                        "2021-01-15T00:00:00Z,501,299,12.5,61\n")
    with pytest.raises(DuplicateTimestamp):
        load_raw_csv(p, SCHEMA, base_period=2)


def test_non_monotone(tmp_path):
    p = write(tmp_path, "timestamp,o3_we,o3_ae,temp_c,rh_pct\n"
                        "2021-01-15T00:00:04Z,500,300,12.5,60\n"
                        "2021-01-15T00:00:02Z,501,299,12.5,61\n")
    with pytest.raises(NonMonotoneTimestamps):
        load_raw_csv(p, SCHEMA, base_period=2)


def test_malformed_row_reports_line(tmp_path):
    p = write(tmp_path, "timestamp,o3_we,o3_ae,temp_c,rh_pct\n"
                        "2021-01-15T00:00:00Z,500,300,12.5,60\n"
                        "2021-01-15T00:00:02Z,abc,299,12.5,61\n")
    with pytest.raises(MalformedRow) as info:
        load_raw_csv(p, SCHEMA, base_period=2)
    assert info.value.line == 3
    assert ":3:" in str(info.value)


def test_short_row(tmp_path):
    p = write(tmp_path, "timestamp,o3_we,o3_ae,temp_c,rh_pct\n2021-01-15T00:00:00Z,500,300\n")
    with pytest.raises(MalformedRow):
        load_raw_csv(p, SCHEMA, base_period=2)


def test_unknown_column(tmp_path):
    p = write(tmp_path, "timestamp,o3_we,mystery\n2021-01-15T00:00:00Z,1,2\n2021-01-15T00:00:02Z,1,2\n")
    with pytest.raises(UnknownColumn):
        load_raw_csv(p, {"o3_we": "gas_we:O3"})
    with pytest.raises(UnknownColumn):
        load_raw_csv(p)


def test_off_grid_rejected_and_jitter_accepted(tmp_path):
    schema = {"temp_c": "temperature"}
    jitter = write(tmp_path, "timestamp,temp_c\n2021-01-15T00:00:00Z,1\n2021-01-15T00:00:10Z,1\n"
                             "2021-01-15T00:00:21Z,1\n2021-01-15T00:00:29Z,1\n", "jitter.csv")
    assert len(load_raw_csv(jitter, schema, base_period=10)) == 4
    off = write(tmp_path, "timestamp,temp_c\n2021-01-15T00:00:00Z,1\n2021-01-15T00:00:10Z,1\n"
                          "2021-01-15T00:00:25Z,1\n", "off.csv")
    with pytest.raises(OffGridTimestamp):
        load_raw_csv(off, schema, base_period=10)


def test_gaps_in_grid_allowed(tmp_path):
    p = write(tmp_path, "timestamp,temp_c\n2021-01-15T00:00:00Z,1\n2021-01-15T00:00:02Z,1\n"
                        "2021-01-15T00:00:10Z,1\n")
    assert len(load_raw_csv(p, {"temp_c": "temperature"}, base_period=2)) == 3


def test_infer_schema(tmp_path):
    p = write(tmp_path, "timestamp,no2_we,no2_ae,temperature,humidity\n"
                        "2021-01-15T00:00:00Z,1,2,3,4\n2021-01-15T00:00:02Z,1,2,3,4\n")
    raw = load_raw_csv(p)
    assert raw.channel_ids == (ChannelId("gas_we", "NO2"), ChannelId("gas_ae", "NO2"),
                               ChannelId("temperature"), ChannelId("humidity"))


def test_round_trip_is_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    times = T0 + 2 * np.array([0, 1, 2, 5, 6, 7])
    vals = rng.normal(300, 50, (6, 4))
    vals[1, 1] = np.nan
    ids = tuple(ChannelId.parse(SCHEMA[c]) for c in SCHEMA)
    raw = RawSeries(times, vals, tuple(SCHEMA), ids, 2.0)
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    write_raw_csv(raw, a)
    back = load_raw_csv(a, SCHEMA, base_period=2)
    np.testing.assert_array_equal(back.times, raw.times)
    np.testing.assert_array_equal(back.values, raw.values)
    write_raw_csv(back, b)
    assert a.read_bytes() == b.read_bytes()


def test_reference_round_trip(tmp_path):
    ref = ReferenceSeries(3600, "O3", T0 + 3600 * np.arange(4), [10.5, np.nan, 12.0, 1 / 3])
    p = tmp_path / "ref.csv"
    write_reference_csv(ref, p)
    back = load_reference_csv(p, "O3")
    np.testing.assert_array_equal(back.times, ref.times)
    np.testing.assert_array_equal(back.values, ref.values)
    assert back.n_available == 3


def test_reference_must_be_hour_aligned():
    with pytest.raises(OffGridTimestamp):
        ReferenceSeries(3600, "O3", [T0 + 60], [1.0])


def test_channel_tags():
    with pytest.raises(ValueError):
        ChannelId("gas_we")
    with pytest.raises(ValueError):
        ChannelId("temperature", "O3")
    assert ChannelId("gas_we", "NO").units == "adc"
    assert ChannelId("humidity").units == "%"
    assert str(ChannelId.parse("gas_ae:NO2")) == "gas_ae:NO2"


def test_raw_series_is_immutable():
    raw = RawSeries([T0, T0 + 2], [[1.0], [2.0]], ("temp",), (ChannelId("temperature"),), 2.0)
    with pytest.raises(ValueError):
        raw.values[0, 0] = 5.0


def test_electrode_signal_examples():
    assert electrode_signal(500, 300) == 200
    assert electrode_signal(300, 500) == -200
    assert electrode_signal(417, 417) == 0
    assert math.isnan(electrode_signal(None, 3))
    assert math.isnan(electrode_signal(float("nan"), 3))


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6))
def test_electrode_signal_antisymmetric(a, b):
    assert electrode_signal(a, b) == -electrode_signal(b, a)


def test_derive_features_signal_and_separate():
    ids = (ChannelId("gas_we", "O3"), ChannelId("gas_ae", "O3"), ChannelId("temperature"))
    raw = RawSeries([T0, T0 + 2], [[500, 300, 10], [510, 290, 11]], ("o3_we", "o3_ae", "t"), ids, 2.0)
    sig = derive_features(raw)
    assert sig.channels == ("o3_s", "t")
    np.testing.assert_array_equal(sig.column("o3_s"), [200, 220])
    sep = derive_features(raw, "separate")
    assert sep.channels == ("o3_we", "o3_ae", "t")


def _hourly(start, n, values=None, names=("f",)):
    times = start + 3600 * np.arange(n)
    v = np.arange(n, dtype=float)[:, None] if values is None else values
    return PeriodSeries(3600, times, names, v)


def test_align_with_missing_reference():
    sensor = _hourly(T0, 10)
    vals = np.arange(10, dtype=float)
    vals[[3, 7]] = np.nan
    ref = ReferenceSeries(3600, "O3", T0 + 3600 * np.arange(10), vals)
    ds = align(sensor, ref)
    assert len(ds) == 10
    assert ds.n_usable == 8
    assert ds.gaps.tolist() == [i in (3, 7) for i in range(10)]
    assert len(ds.usable()) == 8


def test_align_disjoint_and_period_mismatch():
    sensor = _hourly(T0, 5)
    ref = ReferenceSeries(3600, "O3", T0 + 3600 * np.arange(100, 105), np.ones(5))
    with pytest.raises(EmptyIntersection):
        align(sensor, ref)
    with pytest.raises(PeriodMismatch):
        align(PeriodSeries(600, T0 + 600 * np.arange(3), ("f",), np.ones((3, 1))), ref)


def test_four_month_campaign_candidate_rows():
    # independent count from calendar arithmetic
    start = datetime(2021, 1, 15, tzinfo=timezone.utc)
    end = datetime(2021, 5, 15, tzinfo=timezone.utc)
    expected = int((end - start).total_seconds() // 3600)
    assert expected == 2880
    n = expected
    sensor = _hourly(int(start.timestamp()), n)
    ref = ReferenceSeries(3600, "O3", int(start.timestamp()) + 3600 * np.arange(n), np.ones(n))
    assert len(align(sensor, ref)) == 2880


@settings(max_examples=50, deadline=None)
@given(
    st.integers(0, 20), st.integers(1, 30), st.integers(0, 20), st.integers(1, 30),
    st.lists(st.integers(0, 60), max_size=10), st.lists(st.integers(0, 60), max_size=10),
)
def test_align_never_fabricates_and_gaps_monotone(s0, ns, r0, nr, sensor_holes, ref_holes):
    sv = np.ones((ns, 1))
    sensor = _hourly(T0 + 3600 * s0, ns, sv)
    rv = np.ones(nr)
    ref = ReferenceSeries(3600, "O3", T0 + 3600 * (r0 + np.arange(nr)), rv)
    try:
        ds = align(sensor, ref)
    except EmptyIntersection:
        return
    assert len(ds) <= min(ns, nr)
    sv2 = sv.copy()
    sv2[[h for h in sensor_holes if h < ns]] = np.nan
    rv2 = rv.copy()
    rv2[[h for h in ref_holes if h < nr]] = np.nan
    ds2 = align(_hourly(T0 + 3600 * s0, ns, sv2), ReferenceSeries(3600, "O3", ref.times, rv2))
    assert ds2.n_usable <= ds.n_usable


def test_dataset_select_and_shapes():
    ds = AggregatedDataset(("a", "b"), [T0, T0 + 3600], [[1, 2], [3, np.nan]], [1, 2], "O3")
    assert ds.P == 2
    assert ds.select(["b"]).gaps.tolist() == [False, True]
    assert ds.select(["a"]).n_usable == 2
    with pytest.raises(KeyError):
        ds.select(["zzz"])
