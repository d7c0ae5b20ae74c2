"""Calibrate an O3 sensor with MLR and pick features by forward selection.

The O3 electrode also responds to NO2, so the NO2 sensor signal is a
valuable regressor even though it measures another gas. Forward selection
with temperature and humidity always included finds it first.

    python demos/03_calibration_selection.py --target O3
"""

import argparse

from airsample import SamplingPlan, correlation_matrix, forward_select, kfold_cv
from airsample.calibration import evaluate, fit_mlr
from airsample.experiment import ExperimentConfig, ExperimentData, prepare_dataset, split
from airsample.synth import generate, noisy_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--target", choices=("O3", "NO2", "NO"), default="O3")
    ap.add_argument("--days", type=float, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    raw, refs, truth = generate(noisy_scenario(duration_days=args.days, seed=args.seed))
    data = ExperimentData.from_raw(raw, refs)
    config = ExperimentConfig.from_dict({"evaluation": {"seeds": [args.seed]}})
    ds, _ = prepare_dataset(config, data, SamplingPlan.full_availability(2), args.target)

    corr = correlation_matrix(ds)
    print("correlation with the reference:")
    for name in ds.feature_names:
        print(f"  {name:<12}{corr[name, args.target]:+.3f}")

    gases = [f for f in ds.feature_names if f.endswith("_s")]
    steps = forward_select(ds, ["temperature", "humidity"], gases, k=10, seed=args.seed)
    print("\nforward selection (temperature, humidity always in):")
    for step in steps:
        lo, hi = step.cv.ci95
        print(f"  + {step.added:<8} CV R2 {step.cv.mean_r2:.4f}  [{lo:.4f}, {hi:.4f}]")

    best = max(steps, key=lambda s: s.cv.mean_r2)  # earliest step wins a tie
    chosen = best.features
    train, test = split(ds.select(chosen), 0.75, args.seed)
    model = fit_mlr(train.X, train.y, chosen, args.target)
    metrics = evaluate(model, test)
    print(f"\nmodel on {', '.join(chosen)}: test R2 {metrics.r2:.4f}, RMSE {metrics.rmse:.3f} ug/m3")
    print("coefficients:", {k: round(v, 4) for k, v in model.coefficients.items()})
    cv = kfold_cv(ds, 10, chosen, args.seed)
    print(f"10-fold CV R2 {cv.mean_r2:.4f}")
    print("generator beta over all five features:", truth.beta[args.target].round(4).tolist())


if __name__ == "__main__":
    main()
