"""Duty cycle and average power of a few sampling plans.

A node that wakes every T_sen seconds, warms its sensors for T_r seconds
and then takes N_s measures of T_s seconds is on for T_r + N_s*T_s out of
every T_sen. Power follows directly from that fraction.

    python demos/01_duty_cycle_energy.py --p-on 100 --p-sleep 1
"""

import argparse

from airsample import SamplingPlan, duty_cycle
from airsample.sampling import EnergyProfile, energy_estimate, validate_plan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p-on", type=float, default=100.0, help="power while sampling, mW")
    ap.add_argument("--p-sleep", type=float, default=0.0, help="power while asleep, mW")
    args = ap.parse_args()
    profile = EnergyProfile(args.p_on, args.p_sleep)

    plans = [
        SamplingPlan(2, 2, 1, 120),  # warm-up longer than the period: the node never sleeps
        SamplingPlan(2, 60, 5, 120),
        SamplingPlan(2, 600, 5, 120),
        SamplingPlan(2, 1200, 1, 120),
        SamplingPlan(2, 3600, 1, 120),
        SamplingPlan(2, 1800, 5, 0, "uniform"),
        SamplingPlan(2, 1800, 5, 120, "uniform"),  # infeasible, shown for the violation
    ]
    print(f"{'plan':<42}{'dc':>8}{'mW':>9}  notes")
    for plan in plans:
        res = duty_cycle(plan)
        notes = [str(v) for v in validate_plan(plan)]
        if res.always_on:
            notes.append("always on")
        print(f"{plan.label():<42}{res.dc:>8.4f}{energy_estimate(plan, profile):>9.2f}  {', '.join(notes)}")


if __name__ == "__main__":
    main()
