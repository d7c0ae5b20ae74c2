"""Calibration quality against duty cycle over a grid of sampling plans.

Sweeps T_sen and N_s for consecutive and uniform sampling on a synthetic
campaign and prints the table sorted by duty cycle. The same grid can be
run from the command line with ``airsample sweep --config demos/sweep.toml``.

    python demos/04_tradeoff_sweep.py --days 14 --seeds 3 --out sweep.csv
"""

import argparse

from airsample import emit_report, sweep
from airsample.experiment import ExperimentConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--days", type=float, default=14)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--t-r", type=float, default=120, help="sensor warm-up before each wake-up, s")
    ap.add_argument("--out", default=None, help="optional CSV path for the report")
    args = ap.parse_args()

    config = ExperimentConfig.from_dict({
        "data": {"source": "synth"},
        "synth": {"preset": "noisy", "duration_days": args.days, "seed": 0},
        "plans": {
            "t_sen": [2, 60, 300, 600, 1200, 1800, 3600],
            "n_s": [1, 5],
            "t_r": [0, args.t_r],
            "modes": ["consecutive", "uniform"],
        },
        "features": {"target": "O3", "O3": {"fixed": ["o3_s", "no2_s", "temperature", "humidity"]}},
        "evaluation": {"seeds": list(range(args.seeds))},
    })
    report = sweep(config)
    print(f"{'mode':<12}{'t_sen':>7}{'n_s':>4}{'t_r':>5}{'dc':>8}{'cv_r2':>8}{'ci95':>18}{'mW':>8}")
    for r in report.ok_rows():
        print(f"{r.mode:<12}{r.t_sen_s:>7g}{r.n_s:>4}{r.t_r_s:>5g}{r.dc:>8.4f}{r.cv_r2_mean:>8.4f}"
              f"   [{r.cv_r2_lo:.3f}, {r.cv_r2_hi:.3f}]{r.avg_power_mw:>8.2f}")
    skipped = [r for r in report.rows if r.status != "ok"]
    if skipped:
        print(f"\n{len(skipped)} plans rejected or failed, for example:")
    for r in skipped[:3]:
        print(f"  {r.mode} t_sen={r.t_sen_s:g} n_s={r.n_s} t_r={r.t_r_s:g}: {r.status} ({r.reason})")
    if args.out:
        emit_report(report, args.out)
        print(f"\nwrote {args.out}")


if __name__ == "__main__":
    main()
