"""End-to-end runs: plan grids, pipeline execution, evaluation and reports."""

from __future__ import annotations

import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import calibration as cal
from .core import (
    AggregatedDataset,
    RawSeries,
    ReferenceSeries,
    align,
    derive_features,
    load_raw_csv,
    load_reference_csv,
)
from .preprocess import AggregateSpec, FilterSpec, to_ref_series, to_sen_series
from .sampling import (
    HOUR,
    EnergyProfile,
    SamplingPlan,
    average_power,
    duty_cycle,
    is_runnable,
    simulate,
    validate_plan,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

SEED_ENV = "AIRSAMPLE_SEED"
DEFAULT_SEEDS = tuple(range(10))


class ConfigError(ValueError):
    pass


class StageError(Exception):
    """A pipeline failure tagged with the stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# --- configuration --------------------------------------------------------

DEFAULTS: dict[str, Any] = {
    "data": {"electrodes": "signal", "reference_period": HOUR},
    "plans": {"t_s": 2.0, "t_sen": [2.0], "n_s": [1], "t_r": [0.0], "modes": ["consecutive"], "t_ref": HOUR},
    "filter": {"method": "zscore", "threshold": 2.0, "scope": "window", "channels": "gas"},
    "aggregate": {"statistic": "mean"},
    "features": {},
    "evaluation": {"split": 0.75, "cv_k": 10, "jobs": 1},
    "energy": {"p_on_mw": 100.0, "p_sleep_mw": 0.0},
}


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> tuple[list[str], Any]:
    """``"evaluation.cv_k=10"`` -> (["evaluation", "cv_k"], 10). Values are TOML literals, else strings."""
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        parsed = tomllib.loads(f"v = {value}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value
    return key.strip().split("."), parsed


def apply_overrides(d: dict, overrides: Sequence[str]) -> dict:
    d = copy.deepcopy(d)
    for text in overrides:
        path, value = parse_override(text)
        node = d
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r}: {part!r} is not a section")
        node[path[-1]] = value
    return d


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass(frozen=True)
class FeaturePolicy:
    always_in: tuple[str, ...] = ()
    candidates: tuple[str, ...] = ()
    fixed: tuple[str, ...] | None = None

    @property
    def features(self) -> tuple[str, ...]:
        return self.fixed if self.fixed is not None else self.always_in + self.candidates


@dataclass
class ExperimentConfig:
    """Resolved run configuration; ``echo`` is the document it was built from."""

    echo: dict
    base_dir: Path = Path(".")
    raw_path: Path | None = None
    reference_paths: dict[str, Path] = field(default_factory=dict)
    channels: dict[str, str] | None = None
    base_period: float | None = None
    electrodes: str = "signal"
    reference_period: float = HOUR
    synth: dict | None = None
    t_s: float = 2.0
    t_sen: tuple[float, ...] = (2.0,)
    n_s: tuple[int, ...] = (1,)
    t_r: tuple[float, ...] = (0.0,)
    modes: tuple[str, ...] = ("consecutive",)
    t_ref: float = HOUR
    filter: FilterSpec = FilterSpec()
    aggregate_sen: AggregateSpec = AggregateSpec()
    aggregate_ref: AggregateSpec = AggregateSpec()
    target: str | None = None
    targets: tuple[str, ...] = ()
    policies: dict[str, FeaturePolicy] = field(default_factory=dict)
    split: float = 0.75
    cv_k: int = 10
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    jobs: int = 1
    energy: EnergyProfile = EnergyProfile(100.0, 0.0)
    calibrate_plan: SamplingPlan | None = None

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: Path | str = ".") -> "ExperimentConfig":
        known = {"data", "plans", "filter", "aggregate", "features", "evaluation", "energy", "synth", "calibrate"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config sections {sorted(unknown)}")
        echo = _merge(DEFAULTS, d)
        ev = echo["evaluation"]
        if "seeds" not in ev:
            env = os.environ.get(SEED_ENV)
            ev["seeds"] = [int(env)] if env not in (None, "") else list(DEFAULT_SEEDS)
        try:
            return cls._build(echo, Path(base_dir))
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"invalid configuration: {exc}") from exc

    @classmethod
    def _build(cls, echo: dict, base_dir: Path) -> "ExperimentConfig":
        data, plans, ev = echo["data"], echo["plans"], echo["evaluation"]
        agg = echo["aggregate"]
        feats = echo["features"]
        source = data.get("source", "files")
        if source not in ("files", "synth"):
            raise ConfigError("data.source must be 'files' or 'synth'")
        if source == "synth" and "synth" not in echo:
            raise ConfigError("data.source = 'synth' needs a [synth] section")

        policies = {}
        for name, sub in feats.items():
            if isinstance(sub, Mapping):
                fixed = sub.get("fixed")
                policies[name] = FeaturePolicy(
                    tuple(sub.get("always_in", ())),
                    tuple(sub.get("candidates", ())),
                    tuple(fixed) if fixed is not None else None,
                )
        refs = {k: base_dir / v for k, v in data.get("reference", {}).items()}
        target = feats.get("target")
        targets = tuple(_as_list(feats["targets"])) if "targets" in feats else ()
        if not targets:
            targets = (target,) if target else tuple(refs) or tuple(policies)
        if target is None and targets:
            target = targets[0]

        split = float(ev["split"])
        if not 0 < split < 1:
            raise ConfigError("evaluation.split must be in (0, 1)")
        seeds = tuple(int(s) for s in _as_list(ev["seeds"]))
        if not seeds:
            raise ConfigError("evaluation.seeds must be non-empty")
        energy = echo["energy"]
        t_s = float(plans["t_s"])
        calib = echo.get("calibrate")
        calibrate_plan = None
        if calib:
            calibrate_plan = SamplingPlan(
                t_s, float(calib.get("t_sen", t_s)), int(calib.get("n_s", 1)),
                float(calib.get("t_r", 0.0)), calib.get("mode", "consecutive"),
            )
        return cls(
            echo=echo,
            base_dir=base_dir,
            raw_path=base_dir / data["raw"] if "raw" in data else None,
            reference_paths=refs,
            channels=dict(data["channels"]) if "channels" in data else None,
            base_period=float(data["base_period"]) if "base_period" in data else None,
            electrodes=data["electrodes"],
            reference_period=float(data["reference_period"]),
            synth=dict(echo["synth"]) if source == "synth" else None,
            t_s=t_s,
            t_sen=tuple(float(v) for v in _as_list(plans["t_sen"])),
            n_s=tuple(int(v) for v in _as_list(plans["n_s"])),
            t_r=tuple(float(v) for v in _as_list(plans["t_r"])),
            modes=tuple(_as_list(plans["modes"])),
            t_ref=float(plans["t_ref"]),
            filter=FilterSpec(**echo["filter"]),
            aggregate_sen=AggregateSpec(agg["statistic"], agg.get("min_count_sen")),
            aggregate_ref=AggregateSpec(agg["statistic"], agg.get("min_count_ref")),
            target=target,
            targets=targets,
            policies=policies,
            split=split,
            cv_k=int(ev["cv_k"]),
            seeds=seeds,
            jobs=max(1, int(ev["jobs"])),
            energy=EnergyProfile(float(energy["p_on_mw"]), float(energy["p_sleep_mw"])),
            calibrate_plan=calibrate_plan,
        )

    def plan_grid(self) -> list[SamplingPlan]:
        return [
            SamplingPlan(self.t_s, t_sen, n_s, t_r, mode)
            for t_sen, n_s, t_r, mode in itertools.product(self.t_sen, self.n_s, self.t_r, self.modes)
        ]

    def policy(self, target: str) -> FeaturePolicy | None:
        return self.policies.get(target)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.echo).encode()).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def load_config(path, overrides: Sequence[str] = ()) -> ExperimentConfig:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            d = tomllib.load(fh)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return ExperimentConfig.from_dict(apply_overrides(d, overrides), path.parent)


# --- data -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ExperimentData:
    features: RawSeries  # derived calibration channels at the raw rate
    references: dict[str, ReferenceSeries]

    @classmethod
    def from_raw(cls, raw: RawSeries, references: Mapping[str, ReferenceSeries], electrodes: str = "signal"):
        return cls(derive_features(raw, electrodes), dict(references))


def load_data(config: ExperimentConfig) -> ExperimentData:
    if config.synth is not None:
        from .synth import generate, scenario_from_dict

        raw, refs, _ = generate(scenario_from_dict(config.synth))
        return ExperimentData.from_raw(raw, refs, config.electrodes)
    if config.raw_path is None:
        raise ConfigError("data.raw is required")
    for p in [config.raw_path, *config.reference_paths.values()]:
        if not p.exists():
            raise FileNotFoundError(f"input file not found: {p}")
    raw = load_raw_csv(config.raw_path, config.channels, config.base_period)
    refs = {
        pol: load_reference_csv(p, pol, config.reference_period) for pol, p in config.reference_paths.items()
    }
    return ExperimentData.from_raw(raw, refs, config.electrodes)


# --- pipeline -------------------------------------------------------------


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def build_dataset(
    features: RawSeries,
    reference: ReferenceSeries,
    plan: SamplingPlan,
    filt: FilterSpec = FilterSpec(),
    agg_sen: AggregateSpec = AggregateSpec(),
    agg_ref: AggregateSpec = AggregateSpec(),
    t_ref: float = HOUR,
) -> AggregatedDataset:
    """simulate -> filter/aggregate per tick -> aggregate per T_ref -> align."""
    windows = _stage("simulate", simulate, features, plan)
    sen = _stage("aggregate_sen", to_sen_series, windows, filt, agg_sen, t_ref)
    ref_level = _stage("aggregate_ref", to_ref_series, sen, t_ref, agg_ref)
    return _stage("align", align, ref_level, reference)


def split(dataset: AggregatedDataset, fraction: float = 0.75, seed: int = 0):
    """Shuffle usable rows with ``seed``; the first ``ceil(fraction * N)`` train."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    data = dataset.usable()
    n = len(data)
    if n < 8:
        raise cal.InsufficientData(f"split needs at least 8 usable rows, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = math.ceil(fraction * n - 1e-9)
    return data.take(np.sort(order[:n_train])), data.take(np.sort(order[n_train:]))


def retention(dataset: AggregatedDataset, reference: ReferenceSeries, span: tuple[int, int]) -> float:
    """Usable aligned rows over reference values available during ``span``."""
    lo = math.floor(span[0] / reference.period) * reference.period
    inside = (reference.times >= lo) & (reference.times <= span[1]) & ~np.isnan(reference.values)
    available = int(np.count_nonzero(inside))
    return dataset.n_usable / available if available else math.nan


@dataclass(frozen=True, eq=False)
class SeedResult:
    plan: SamplingPlan
    target: str
    seed: int
    dc: float
    always_on: bool
    cv: cal.CvSummary
    test: cal.FitMetrics
    model: cal.CalibrationModel
    usable_rows: int
    retention: float
    avg_power_mw: float


def evaluate_dataset(dataset: AggregatedDataset, features: Sequence[str], fraction: float, k: int, seed: int):
    data = dataset.select(features)
    train, test = _stage("split", split, data, fraction, seed)
    model = _stage("fit", cal.fit_mlr, train.X, train.y, train.feature_names, dataset.target)
    metrics = _stage("test", cal.evaluate, model, test)
    cv = _stage("cv", cal.kfold_cv, data, k, features, seed)
    return model, metrics, cv


def resolve_features(config: ExperimentConfig, target: str, available: Sequence[str]) -> tuple[str, ...]:
    policy = config.policy(target)
    feats = policy.features if policy is not None and policy.features else tuple(available)
    missing = [f for f in feats if f not in available]
    if missing:
        raise ConfigError(f"features {missing} for target {target} not in data ({list(available)})")
    return tuple(feats)


def prepare_dataset(config: ExperimentConfig, data: ExperimentData, plan: SamplingPlan, target: str):
    if target not in data.references:
        raise ConfigError(f"no reference series for target {target!r}")
    ref = data.references[target]
    ds = build_dataset(data.features, ref, plan, config.filter, config.aggregate_sen, config.aggregate_ref, config.t_ref)
    ret = retention(ds, ref, (data.features.start_time, data.features.end_time))
    return ds, ret


def run_plan(
    config: ExperimentConfig,
    plan: SamplingPlan,
    target: str,
    seed: int,
    data: ExperimentData | None = None,
    _prepared=None,
) -> SeedResult:
    """Full pipeline for one plan/target/seed: test split metrics plus k-fold CV."""
    if not is_runnable(plan, config.t_ref):
        raise StageError("validate", ValueError(", ".join(map(str, validate_plan(plan, config.t_ref)))))
    if data is None:
        data = _stage("load", load_data, config)
    ds, ret = _prepared if _prepared is not None else prepare_dataset(config, data, plan, target)
    feats = _stage("features", resolve_features, config, target, ds.feature_names)
    model, metrics, cv = evaluate_dataset(ds, feats, config.split, config.cv_k, seed)
    dcr = duty_cycle(plan)
    return SeedResult(
        plan, target, seed, dcr.dc, dcr.always_on, cv, metrics, model,
        ds.select(feats).n_usable, ret, average_power(dcr.dc, config.energy.p_on, config.energy.p_sleep),
    )


# --- sweep and reports ----------------------------------------------------


CSV_COLUMNS = (
    "t_sen_s", "n_s", "t_r_s", "mode", "dc", "cv_r2_mean", "cv_r2_lo", "cv_r2_hi",
    "test_r2", "test_rmse", "retention", "avg_power_mw",
    "target", "always_on", "usable_rows", "n_seeds", "status", "reason",
)


@dataclass(frozen=True)
class SweepRow:
    t_sen_s: float
    n_s: int
    t_r_s: float
    mode: str
    dc: float
    cv_r2_mean: float
    cv_r2_lo: float
    cv_r2_hi: float
    test_r2: float
    test_rmse: float
    retention: float
    avg_power_mw: float
    target: str
    always_on: bool
    usable_rows: int
    n_seeds: int
    status: str = "ok"  # ok | failed | rejected
    reason: str = ""

    def sort_key(self):
        return (self.dc, self.t_sen_s, self.n_s, self.t_r_s, self.mode, self.target)


@dataclass(frozen=True, eq=False)
class SweepReport:
    rows: tuple[SweepRow, ...]
    config: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def ok_rows(self, target: str | None = None) -> list[SweepRow]:
        return [r for r in self.rows if r.status == "ok" and (target is None or r.target == target)]

    def find(self, **match) -> list[SweepRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]


_NAN = math.nan


def _blank_row(plan: SamplingPlan, target: str, config: ExperimentConfig, status: str, reason: str) -> SweepRow:
    dcr = duty_cycle(plan)
    return SweepRow(
        plan.t_sen, plan.n_s, plan.t_r, plan.mode, dcr.dc, _NAN, _NAN, _NAN, _NAN, _NAN, _NAN,
        average_power(dcr.dc, config.energy.p_on, config.energy.p_sleep), target, dcr.always_on, 0, 0, status, reason,
    )


def aggregate_seeds(results: Sequence[SeedResult]) -> SweepRow:
    """Mean over seeds; the CV band is the mean of the per-seed fold intervals."""
    r0 = results[0]
    mean = lambda xs: float(np.mean(xs))
    return SweepRow(
        r0.plan.t_sen, r0.plan.n_s, r0.plan.t_r, r0.plan.mode, r0.dc,
        mean([r.cv.mean_r2 for r in results]),
        mean([r.cv.ci95[0] for r in results]),
        mean([r.cv.ci95[1] for r in results]),
        mean([r.test.r2 for r in results]),
        mean([r.test.rmse for r in results]),
        r0.retention, r0.avg_power_mw, r0.target, r0.always_on, r0.usable_rows, len(results),
    )


def _run_task(config, data, plan, target):
    try:
        prepared = prepare_dataset(config, data, plan, target)
        results = [run_plan(config, plan, target, seed, data, prepared) for seed in config.seeds]
        return aggregate_seeds(results)
    except (StageError, ConfigError, ArithmeticError, ValueError) as exc:
        log.warning("plan %s target %s failed: %s", plan.label(), target, exc)
        return _blank_row(plan, target, config, "failed", str(exc))


def sweep(config: ExperimentConfig, data: ExperimentData | None = None) -> SweepReport:
    """Evaluate every plan of the grid for every target, aggregated over seeds.

    Infeasible plans become ``rejected`` rows and failing ones ``failed``
    rows; the sweep itself does not stop. Rows are sorted by duty cycle.
    """
    grid = config.plan_grid()
    if not grid or not config.targets:
        raise ConfigError("sweep needs a non-empty plan grid and at least one target")
    if data is None:
        data = _stage("load", load_data, config)
    rows, tasks = [], []
    for plan in grid:
        for target in config.targets:
            if is_runnable(plan, config.t_ref):
                tasks.append((plan, target))
            else:
                reason = ", ".join(map(str, validate_plan(plan, config.t_ref)))
                rows.append(_blank_row(plan, target, config, "rejected", reason))
    with ThreadPoolExecutor(max_workers=config.jobs) as pool:
        rows += list(pool.map(lambda t: _run_task(config, data, *t), tasks))
    rows.sort(key=SweepRow.sort_key)
    return SweepReport(tuple(rows), config.echo)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def sidecar_path(path: Path) -> Path:
    return path.with_name(path.stem + ".config.json")


def emit_report(report: SweepReport, path, fmt: str | None = None) -> list[Path]:
    """Write ``report`` as CSV (plus a JSON config sidecar) or JSON; returns files written."""
    if not report.rows:
        raise ValueError("refusing to write an empty report")
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".") or "csv"
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in report.rows:
                w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        side = sidecar_path(path)
        side.write_text(json.dumps(report.config, indent=2, sort_keys=True, default=str) + "\n")
        return [path, side]
    if fmt == "json":
        doc = {
            "config": report.config,
            "columns": list(CSV_COLUMNS),
            "rows": [{c: _jsonable(getattr(r, c)) for c in CSV_COLUMNS} for r in report.rows],
        }
        path.write_text(json.dumps(doc, indent=2, default=str, allow_nan=False) + "\n")
        return [path]
    raise ValueError(f"unknown report format {fmt!r}")


_ROW_TYPES = {f.name: f.type for f in fields(SweepRow)}


def _coerce(name: str, v):
    kind = _ROW_TYPES[name]
    if kind == "float":
        return _NAN if v in (None, "") else float(v)
    if kind == "int":
        return int(v)
    if kind == "bool":
        return v if isinstance(v, bool) else v == "true"
    return "" if v is None else str(v)


def read_report(path) -> SweepReport:
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        rows = tuple(SweepRow(**{c: _coerce(c, r[c]) for c in CSV_COLUMNS}) for r in doc["rows"])
        return SweepReport(rows, doc.get("config", {}))
    with path.open(newline="") as fh:
        rows = tuple(SweepRow(**{c: _coerce(c, r[c]) for c in CSV_COLUMNS}) for r in csv.DictReader(fh))
    side = sidecar_path(path)
    config = json.loads(side.read_text()) if side.exists() else {}
    return SweepReport(rows, config)


def seed_result_dict(res: SeedResult) -> dict:
    return {
        "plan": asdict(res.plan),
        "target": res.target,
        "seed": res.seed,
        "dc": res.dc,
        "always_on": res.always_on,
        "cv": {"k": res.cv.k, "per_fold_r2": list(res.cv.per_fold_r2), "mean_r2": res.cv.mean_r2,
               "ci95": list(res.cv.ci95)},
        "test": asdict(res.test),
        "usable_rows": res.usable_rows,
        "retention": res.retention,
        "avg_power_mw": res.avg_power_mw,
    }
