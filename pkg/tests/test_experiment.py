import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from airsample.core import AggregatedDataset
from airsample.calibration import InsufficientData
from airsample.experiment import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    StageError,
    apply_overrides,
    emit_report,
    load_config,
    parse_override,
    prepare_dataset,
    read_report,
    run_plan,
    split,
    sweep,
)
from airsample.sampling import SamplingPlan, duty_cycle

from conftest import quick_config


def _ds(n):
    rng = np.random.default_rng(n)
    return AggregatedDataset(("a",), 3600 * np.arange(n), rng.normal(size=(n, 1)), rng.normal(size=n), "O3")


def test_split_sizes_and_determinism():
    ds = _ds(100)
    train, test = split(ds, 0.75, seed=1)
    assert (len(train), len(test)) == (75, 25)
    again = split(ds, 0.75, seed=1)
    np.testing.assert_array_equal(train.times, again[0].times)
    assert set(train.times.tolist()).isdisjoint(test.times.tolist())
    assert sorted(np.r_[train.times, test.times].tolist()) == ds.times.tolist()


@given(st.integers(8, 400), st.integers(0, 1000))
def test_split_nested_across_fractions(n, seed):
    ds = _ds(n)
    small = split(ds, 0.75, seed)[0]
    big = split(ds, 0.80, seed)[0]
    assert set(small.times.tolist()) <= set(big.times.tolist())


def test_split_too_few_rows():
    with pytest.raises(InsufficientData):
        split(_ds(7), 0.75, 0)


def test_override_parsing():
    assert parse_override("evaluation.cv_k=10") == (["evaluation", "cv_k"], 10)
    assert parse_override("features.target=NO2") == (["features", "target"], "NO2")
    assert parse_override("plans.t_sen=[60, 600]") == (["plans", "t_sen"], [60, 600])
    assert parse_override('filter.method="none"')[1] == "none"
    with pytest.raises(ConfigError):
        parse_override("novalue")
    d = apply_overrides({"a": {"b": 1}}, ["a.c=2.5", "x.y.z=true"])
    assert d == {"a": {"b": 1, "c": 2.5}, "x": {"y": {"z": True}}}


def test_config_defaults_and_validation(monkeypatch):
    monkeypatch.delenv("AIRSAMPLE_SEED", raising=False)
    c = ExperimentConfig.from_dict({})
    assert c.split == 0.75 and c.cv_k == 10 and c.seeds == tuple(range(10))
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"evaluation": {"split": 1.0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"evaluation": {"seeds": []}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"mystery": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"filter": {"method": "bogus"}})


def test_seed_env_fallback(monkeypatch):
    monkeypatch.setenv("AIRSAMPLE_SEED", "17")
    assert ExperimentConfig.from_dict({}).seeds == (17,)
    assert ExperimentConfig.from_dict({"evaluation": {"seeds": [1, 2]}}).seeds == (1, 2)


def test_load_config_file(tmp_path):
    p = tmp_path / "run.toml"
    p.write_text('[data]\nraw = "raw.csv"\n[data.reference]\nO3 = "ref.csv"\n'
                 '[plans]\nt_sen = [60, 600]\nn_s = [1, 5]\nmodes = ["consecutive", "uniform"]\n')
    c = load_config(p, ["evaluation.cv_k=5"])
    assert c.raw_path == tmp_path / "raw.csv"
    assert c.reference_paths == {"O3": tmp_path / "ref.csv"}
    assert c.cv_k == 5
    assert c.targets == ("O3",)
    assert len(c.plan_grid()) == 8
    assert c.echo["evaluation"]["cv_k"] == 5
    assert c.config_hash == load_config(p, ["evaluation.cv_k=5"]).config_hash
    assert c.config_hash != load_config(p).config_hash


def test_run_plan_fields(noisy_small):
    _, _, _, data = noisy_small
    config = quick_config()
    plan = SamplingPlan(2, 600, 5, 120)
    res = run_plan(config, plan, "O3", 0, data)
    assert res.dc == duty_cycle(plan).dc
    assert res.usable_rows == 6 * 24
    assert res.retention == 1.0
    assert res.model.feature_names == ("o3_s", "no2_s", "temperature", "humidity")
    assert 0.9 < res.cv.mean_r2 <= 1.0
    assert res.avg_power_mw == pytest.approx(100 * 130 / 600)


def test_run_plan_rejects_invalid_plan(noisy_small):
    with pytest.raises(StageError) as info:
        run_plan(quick_config(), SamplingPlan(2, 7200, 1), "O3", 0, noisy_small[3])
    assert info.value.stage == "validate"


def test_stage_name_on_failure(noisy_small):
    # every hour becomes a gap: too few rows to split
    config = quick_config(aggregate={"min_count_sen": 5})
    with pytest.raises(StageError) as info:
        run_plan(config, SamplingPlan(2, 3600, 1), "O3", 0, noisy_small[3])
    assert info.value.stage == "split"


@pytest.mark.parametrize("m", [1, 2, 3, 4])
def test_retention_monotone_in_min_count(m):
    from airsample.synth import generate, noisy_scenario
    from airsample.experiment import ExperimentData

    raw, refs, _ = generate(noisy_scenario(duration_days=2, gap_rate=0.6, seed=5))
    data = ExperimentData.from_raw(raw, refs)
    plan = SamplingPlan(2, 600, 4, 0)
    a = prepare_dataset(quick_config(aggregate={"min_count_sen": m}), data, plan, "O3")[1]
    b = prepare_dataset(quick_config(aggregate={"min_count_sen": m + 1}), data, plan, "O3")[1]
    assert b <= a


def grid_config(**extra):
    sections = {
        "plans": {"t_sen": [2, 600, 1800, 7200], "n_s": [1, 5], "t_r": [0, 120], "modes": ["consecutive", "uniform"]},
        "evaluation": {"seeds": [0, 1]},
    }
    sections.update(extra)
    return quick_config(**sections)


@pytest.fixture(scope="module")
def small_report(noisy_small):
    return sweep(grid_config(), noisy_small[3])


def test_sweep_cardinality_and_order(small_report):
    rows = small_report.rows
    assert len(rows) == 4 * 2 * 2 * 2
    dcs = [r.dc for r in rows]
    assert dcs == sorted(dcs)
    statuses = {r.status for r in rows}
    assert statuses <= {"ok", "failed", "rejected"}
    rejected = [r for r in rows if r.status == "rejected"]
    assert all(r.t_sen_s == 7200 or (r.mode == "uniform" and r.t_r_s > 0) for r in rejected)
    assert all(r.reason for r in rows if r.status != "ok")
    ok = small_report.ok_rows()
    assert all(r.n_seeds == 2 and r.cv_r2_lo <= r.cv_r2_mean <= r.cv_r2_hi for r in ok)
    # t_sen=2 with n_s=5 cannot fit five measures: a failed row, not an abort
    assert small_report.find(t_sen_s=2.0, n_s=5, t_r_s=0.0, mode="consecutive")[0].status == "failed"


def test_sweep_baseline_dominance(small_report):
    ok = small_report.ok_rows()
    best = max(r.cv_r2_mean for r in ok)
    base = [r for r in ok if r.always_on]
    assert any(r.cv_r2_hi >= best for r in base)


def test_sweep_dc_consistent(small_report):
    for r in small_report.rows:
        assert r.dc == duty_cycle(SamplingPlan(2, r.t_sen_s, r.n_s, r.t_r_s, r.mode)).dc


def test_emit_round_trip(tmp_path, small_report):
    files = emit_report(small_report, tmp_path / "s.csv")
    assert [f.name for f in files] == ["s.csv", "s.config.json"]
    header = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert header.startswith("t_sen_s,n_s,t_r_s,mode,dc,cv_r2_mean,cv_r2_lo,cv_r2_hi,test_r2,test_rmse,retention,avg_power_mw")
    assert header.split(",") == list(CSV_COLUMNS)
    for path in (tmp_path / "s.csv", emit_report(small_report, tmp_path / "s.json")[0]):
        back = read_report(path)
        assert back.config == json.loads(json.dumps(small_report.config, default=str))
        for a, b in zip(small_report.rows, back.rows):
            for c in CSV_COLUMNS:
                x, y = getattr(a, c), getattr(b, c)
                assert (isinstance(x, float) and math.isnan(x) and math.isnan(y)) or x == y


def test_emit_empty_report_fails(tmp_path):
    from airsample.experiment import SweepReport

    with pytest.raises(ValueError):
        emit_report(SweepReport(()), tmp_path / "x.csv")


def test_sweep_parallel_matches_sequential(tmp_path, noisy_small, small_report):
    par = sweep(grid_config(evaluation={"seeds": [0, 1], "jobs": 4}), noisy_small[3])
    emit_report(small_report, tmp_path / "a.csv")
    emit_report(par, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_sweep_grid_of_thirty():
    from airsample.synth import generate, noisy_scenario
    from airsample.experiment import ExperimentData

    raw, refs, _ = generate(noisy_scenario(duration_days=3, seed=0))
    config = quick_config(
        plans={"t_sen": [60, 300, 600, 1800, 3600], "n_s": [1, 3, 5], "t_r": [120], "modes": ["consecutive", "uniform"]},
        evaluation={"seeds": [0], "cv_k": 5},
    )
    report = sweep(config, ExperimentData.from_raw(raw, refs))
    assert len(report) == 30
    ok = [r for r in report.rows if r.status == "ok"]
    # uniform plans with warm-up are rejected: at most the 15 consecutive ones run
    assert len(ok) <= 15
    assert all(r.status == "rejected" for r in report.rows if r.mode == "uniform")
