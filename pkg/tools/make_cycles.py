"""Regenerate the synthetic drive cycles shipped in ecoassist/data/cycles."""

from pathlib import Path

import numpy as np

from ecoassist.harness.cycles import DriveCycle, synthetic_urban, write_cycle

OUT = Path(__file__).resolve().parents[1] / "src" / "ecoassist" / "data" / "cycles"
DT = 0.1


def ramp_hold(segments, idle=30):
    """Lead profile from ``(target, rate, hold_steps)`` segments after ``idle`` stopped steps."""
    vs, v = [0.0] * idle, 0.0
    for target, rate, hold in segments:
        while abs(v - target) > 1e-9:
            v = min(v + rate * DT, target) if target > v else max(v - rate * DT, target)
            vs.append(v)
        vs += [v] * hold
    return np.array(vs)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    write_cycle(OUT / "urban_train.csv", synthetic_urban(seed=11, duration=600.0, name="urban_train"))
    write_cycle(OUT / "urban_eval.csv", synthetic_urban(seed=29, duration=600.0, name="urban_eval",
                                                        cruise=(6.0, 18.0), stop_time=(2.0, 15.0)))
    # lead cruises, then brakes to a halt while a distracted follower is still closing
    v = ramp_hold([(22.0, 1.2, 300), (0.0, 3.0, 600)])
    write_cycle(OUT / "distracted_check.csv", DriveCycle("distracted_check", DT * np.arange(len(v)), v))


if __name__ == "__main__":
    main()
