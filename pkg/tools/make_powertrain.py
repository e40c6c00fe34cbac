"""Regenerate the synthetic default powertrain data file.

Usage: python tools/make_powertrain.py > src/ecoassist/data/powertrain.yaml
"""

import numpy as np

LHV = 42.8e3  # J/g, diesel

ratios = 12.0 * (0.75 / 12.0) ** (np.arange(10) / 9.0)
omega = np.linspace(50.0, 270.0, 12)
torque = np.linspace(0.0, 1100.0, 12)


def fuel(w, t):
    friction = 55.0 + 0.25 * (w - 60.0)
    eta = 0.44 - 0.10 * ((w - 130.0) / 140.0) ** 2 - 0.06 * (1.0 - t / 1100.0) ** 2
    return (friction + t) * w / (eta * LHV)


grid = np.array([[fuel(w, t) for t in torque] for w in omega])

print("# Synthetic medium-duty diesel powertrain (illustrative, not measured).")
print("# Replace with real maps; keep the schema.")
print("format: 1")
print("gear_ratios: [" + ", ".join(f"{r:.4f}" for r in ratios) + "]")
print("final_drive: 3.5")
print("engine_speed_limits: [62.83, 261.8]  # rad/s (600-2500 rpm)")
print("torque_curve:  # [omega rad/s, max torque N*m]")
for w, t in [(62.83, 600.0), (100.0, 950.0), (125.0, 1050.0), (200.0, 1050.0), (261.8, 750.0)]:
    print(f"  - [{w}, {t}]")
print("fuel_map:")
print("  omega: [" + ", ".join(f"{w:.2f}" for w in omega) + "]")
print("  torque: [" + ", ".join(f"{t:.1f}" for t in torque) + "]")
print("  rate:  # g/s, rows follow omega, columns follow torque")
for row in grid:
    print("    - [" + ", ".join(f"{v:.4f}" for v in row) + "]")
