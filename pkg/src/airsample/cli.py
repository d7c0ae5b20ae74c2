"""Command-line entry point: ``airsample {synth,calibrate,select-features,sweep,report}``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import calibration as cal
from . import experiment as exp
from .core import DataError, write_raw_csv, write_reference_csv
from .sampling import PlanError, SamplingPlan, duty_cycle

log = logging.getLogger("airsample")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="airsample", description="Duty-cycled sampling vs calibration quality for low-cost gas sensors.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, type=Path, help="TOML run configuration")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value (dotted key), repeatable")
        sp.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        sp.add_argument("--jobs", type=int, default=None, help="worker cap for sweeps")
        sp.add_argument("-v", "--verbose", action="count", default=0)

    common(sub.add_parser("synth", help="write a synthetic scenario as CSV files"))
    common(sub.add_parser("calibrate", help="fit one calibration model with CV"))
    common(sub.add_parser("select-features", help="greedy forward feature selection"))
    common(sub.add_parser("sweep", help="evaluate the plan grid"))
    rp = sub.add_parser("report", help="summarise or convert a sweep report")
    common(rp, config_required=False)
    rp.add_argument("--input", required=True, type=Path, help="sweep report (.csv or .json)")
    rp.add_argument("--format", choices=("csv", "json"), default=None, help="write a converted copy")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, files, config: exp.ExperimentConfig | None) -> Path:
    doc = {
        "command": command,
        "config_sha256": config.config_hash if config is not None else None,
        "seeds": list(config.seeds) if config is not None else [],
        "files": {str(Path(f).relative_to(out)): _sha256(Path(f)) for f in sorted(map(Path, files))},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _load(args) -> exp.ExperimentConfig:
    if not args.config.exists():
        raise FileNotFoundError(f"config file not found: {args.config}")
    overrides = list(args.overrides)
    if args.jobs is not None:
        overrides.append(f"evaluation.jobs={args.jobs}")
    return exp.load_config(args.config, overrides)


def _calibration_dataset(config: exp.ExperimentConfig, data: exp.ExperimentData):
    plan = config.calibrate_plan or SamplingPlan.full_availability(config.t_s)
    target = config.target
    if target is None:
        raise exp.ConfigError("features.target is required")
    return plan, target, exp.prepare_dataset(config, data, plan, target)


def cmd_synth(args, config):
    from .synth import generate, scenario_from_dict

    if "synth" not in config.echo:
        raise exp.ConfigError("config has no [synth] section")
    spec = scenario_from_dict(config.echo["synth"])
    raw, refs, truth = generate(spec)
    files = [args.out / "raw.csv"]
    write_raw_csv(raw, files[0])
    for pol, ref in refs.items():
        path = args.out / f"reference_{pol}.csv"
        write_reference_csv(ref, path)
        files.append(path)
    gt = args.out / "ground_truth.json"
    gt.write_text(json.dumps({
        "feature_names": list(truth.feature_names),
        "latent_names": list(truth.latent_names),
        "mixing": truth.mixing.tolist(),
        "offset": truth.offset.tolist(),
        "condition_number": truth.condition_number,
        "beta": {k: v.tolist() for k, v in truth.beta.items()},
        "scenario": config.echo["synth"],
    }, indent=2, default=str) + "\n")
    files.append(gt)
    return files


def cmd_calibrate(args, config):
    data = exp.load_data(config)
    plan, target, prepared = _calibration_dataset(config, data)
    seed = config.seeds[0]
    res = exp.run_plan(config, plan, target, seed, data, prepared)
    path = args.out / f"model_{target}.json"
    cal.export_model(
        res.model, path,
        plan={"t_s": plan.t_s, "t_sen": plan.t_sen, "n_s": plan.n_s, "t_r": plan.t_r, "mode": plan.mode},
        duty_cycle=duty_cycle(plan).dc,
        seed=seed,
        test={"r2": res.test.r2, "rmse": res.test.rmse, "n": res.test.n},
        cv={"k": res.cv.k, "mean_r2": res.cv.mean_r2, "ci95": list(res.cv.ci95),
            "per_fold_r2": list(res.cv.per_fold_r2), "ci_method": "normal approximation, mean ± 1.96 sd/sqrt(k)"},
        usable_rows=res.usable_rows,
        retention=res.retention,
        config=config.echo,
    )
    print(f"{target}: test R2={res.test.r2:.4f} RMSE={res.test.rmse:.3f}  "
          f"CV R2={res.cv.mean_r2:.4f} [{res.cv.ci95[0]:.4f}, {res.cv.ci95[1]:.4f}]")
    return [path]


def cmd_select_features(args, config):
    data = exp.load_data(config)
    plan, target, (ds, _) = _calibration_dataset(config, data)
    policy = config.policy(target)
    if policy is None or not policy.candidates:
        raise exp.ConfigError(f"features.{target}.candidates is required for select-features")
    steps = cal.forward_select(ds, policy.always_in, policy.candidates, config.cv_k, config.seeds[0])
    doc = {
        "target": target,
        "always_in": list(policy.always_in),
        "steps": [
            {"added": s.added, "features": list(s.features), "cv_r2_mean": s.cv.mean_r2,
             "cv_r2_lo": s.cv.ci95[0], "cv_r2_hi": s.cv.ci95[1], "scores": s.scores}
            for s in steps
        ],
        "config": config.echo,
    }
    jpath = args.out / f"selection_{target}.json"
    jpath.write_text(json.dumps(doc, indent=2, default=str) + "\n")
    cpath = args.out / f"selection_{target}.csv"
    with cpath.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "added", "cv_r2_mean", "cv_r2_lo", "cv_r2_hi"))
        for i, s in enumerate(steps, start=1):
            w.writerow((i, s.added, repr(s.cv.mean_r2), repr(s.cv.ci95[0]), repr(s.cv.ci95[1])))
    for i, s in enumerate(steps, start=1):
        print(f"step {i}: +{s.added:<12s} CV R2={s.cv.mean_r2:.4f}")
    return [jpath, cpath]


def _print_report(report: exp.SweepReport):
    print(f"{'target':<7}{'mode':<12}{'t_sen_s':>9}{'n_s':>5}{'t_r_s':>7}{'dc':>9}{'cv_r2':>9}{'test_r2':>9}  status")
    for r in report.rows:
        print(f"{r.target:<7}{r.mode:<12}{r.t_sen_s:>9g}{r.n_s:>5}{r.t_r_s:>7g}{r.dc:>9.4f}"
              f"{r.cv_r2_mean:>9.4f}{r.test_r2:>9.4f}  {r.status}")


def cmd_sweep(args, config):
    report = exp.sweep(config)
    files = exp.emit_report(report, args.out / "sweep.csv")
    files += exp.emit_report(report, args.out / "sweep.json")
    _print_report(report)
    return files


def cmd_report(args, config):
    if not args.input.exists():
        raise FileNotFoundError(f"report not found: {args.input}")
    report = exp.read_report(args.input)
    _print_report(report)
    if args.format:
        return exp.emit_report(report, args.out / f"{args.input.stem}.{args.format}", args.format)
    return []


COMMANDS = {
    "synth": cmd_synth,
    "calibrate": cmd_calibrate,
    "select-features": cmd_select_features,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, exp.StageError):
        exc = exc.cause
    if isinstance(exc, (ArithmeticError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _load(args) if args.config is not None else None
        args.out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](args, config)
        write_manifest(args.out, args.command, files, config)
    except exp.StageError as exc:
        print(f"error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return _exit_code(exc)
    except (FileNotFoundError, DataError, exp.ConfigError, PlanError, ArithmeticError,
            np.linalg.LinAlgError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
